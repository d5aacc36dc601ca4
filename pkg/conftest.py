"""Shared fixtures and the finite-difference gradient checker"""

import os

import numpy as np
import pytest

import nn

ROOT = os.path.dirname(os.path.abspath(__file__))
TOY_DIR = os.path.join(ROOT, "data", "toy")


def numeric_gradient(loss_fn, tensor, h=1e-5):
    """Central differences of loss_fn() with respect to every entry of tensor.values"""
    grad = np.zeros(tensor.shape)
    values = tensor.values
    for index in np.ndindex(*tensor.shape):
        original = values[index]
        values[index] = original + h
        plus = loss_fn().item()
        values[index] = original - h
        minus = loss_fn().item()
        values[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


def relative_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def assert_gradients(loss_fn, tensors, tol=1e-4, h=1e-5):
    """Compare tape gradients of loss_fn() with central differences"""
    for t in tensors:
        t.grad = None
    with nn.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        numeric = numeric_gradient(loss_fn, t, h)
        err = relative_error(analytic, numeric)
        assert err < tol, f"{t!r}: relative error {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_paths():
    return {
        "corpus": os.path.join(TOY_DIR, "corpus.tsv"),
        "citations": os.path.join(TOY_DIR, "citations.tsv"),
        "labels": os.path.join(TOY_DIR, "labels.tsv"),
    }


@pytest.fixture(scope="session")
def toy_dataset(toy_paths):
    from datasets import prepare_from_files

    return prepare_from_files(toy_paths["corpus"], toy_paths["citations"], toy_paths["labels"])
