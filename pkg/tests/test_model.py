import math

import numpy as np
import pytest

from probadapt.data import GeneratorSpec, Shift, make_pretrain_task
from probadapt.errors import ContractViolationError, MissingClassError, TrainingDivergedError
from probadapt.model import (feature_extract, head_forward, init_params,
                             heldout_accuracy, learn_prototype, load_checkpoint,
                             load_external_checkpoint, predict_proba, pretrain,
                             save_checkpoint, split_source)
from probadapt.data import DomainDataset
from probadapt.autodiff import EPS
from probadapt.seeding import rng_for


def small_labeled(labels, dim=3, class_count=None, seed=0):
    labels = np.asarray(labels)
    rng = rng_for(seed, "test/smalldata")
    return DomainDataset(rng.normal(size=(len(labels), dim)), labels, "source",
                         class_count or int(labels.max()) + 1)


def test_zero_weights_give_zero_features():
    theta = {"w1": np.zeros((2, 4)), "b1": np.zeros((1, 4))}
    assert np.array_equal(feature_extract(theta, [[1.0, -3.0]]), np.zeros((1, 4)))


def test_identity_layer_relu():
    theta = {"w1": np.eye(2), "b1": np.zeros((1, 2))}
    assert np.array_equal(feature_extract(theta, [[1.0, -1.0]]), [[1.0, 0.0]])


def test_feature_regression_lock_seed0():
    params = init_params(input_dim=3, pretrain_classes=4, task_classes=2, seed=0)
    f = feature_extract(params.theta, [[0.5, -0.25, 1.0]])
    assert f[0, 1] == pytest.approx(0.10803988, abs=1e-8)
    assert f[0, 3] == pytest.approx(2.89719019, abs=1e-8)
    assert float(f.sum()) == pytest.approx(16.775754966077617, abs=1e-9)


def test_width_mismatch_rejected():
    theta = {"w1": np.eye(2), "b1": np.zeros((1, 2))}
    with pytest.raises(ContractViolationError):
        feature_extract(theta, [[1.0, 2.0, 3.0]])


def test_head_zero_logits_uniform():
    head = {"w": np.zeros((4, 3)), "b": np.zeros((1, 3))}
    probs = head_forward(head, np.ones((2, 4)))
    assert np.allclose(probs, 1.0 / 3.0)


def test_head_log2_logits():
    head = {"w": np.zeros((1, 3)), "b": np.array([[math.log(2.0), 0.0, 0.0]])}
    probs = head_forward(head, np.zeros((1, 1)))
    assert np.allclose(probs, [[0.5, 0.25, 0.25]], atol=1e-12)


def test_head_rows_stochastic():
    rng = rng_for(3, "test/head")
    head = {"w": rng.normal(size=(5, 4)), "b": rng.normal(size=(1, 4))}
    probs = head_forward(head, rng.normal(size=(10, 5)))
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-9)


def test_param_groups_are_disjoint_objects():
    params = init_params(3, 4, 2, seed=1)
    ids = {id(v) for g in (params.theta, params.theta_g, params.theta_h) for v in g.values()}
    assert len(ids) == len(params.theta) + len(params.theta_g) + len(params.theta_h)


def pretrain_spec(c2=4, spc=40, noise=0.1, seed=5):
    return GeneratorSpec(input_dim=4, pretrain_classes=c2, task_classes=2,
                         samples_per_class=spc, shift=Shift(noise_scale=noise), seed=seed)


def test_pretrain_separable_blobs_accuracy():
    task = make_pretrain_task(pretrain_spec())
    params = pretrain(task, task_classes=2, epochs=20, lr=0.05, seed=5)
    assert heldout_accuracy(params, task) > 0.95


def test_pretrain_zero_epochs_chance_level():
    # diffuse clusters so an untrained head scores near chance rather than
    # quantising whole blobs into single classes
    task = make_pretrain_task(pretrain_spec(noise=1.5))
    params = pretrain(task, task_classes=2, epochs=0, lr=0.05, seed=5)
    assert abs(heldout_accuracy(params, task) - 0.25) <= 0.15


def test_pretrain_deterministic_and_head_untouched():
    task = make_pretrain_task(pretrain_spec())
    a = pretrain(task, task_classes=2, epochs=5, lr=0.05, seed=5)
    b = pretrain(task, task_classes=2, epochs=5, lr=0.05, seed=5)
    for group in ("theta", "theta_g", "theta_h"):
        for name in a.group(group):
            assert np.array_equal(a.group(group)[name], b.group(group)[name])
    fresh = init_params(4, 4, 2, seed=5)
    for name in fresh.theta_h:
        assert np.array_equal(a.theta_h[name], fresh.theta_h[name])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_pretrain_divergence_carries_epoch():
    task = make_pretrain_task(pretrain_spec())
    with pytest.raises(TrainingDivergedError, match="epoch"):
        pretrain(task, task_classes=2, epochs=5, lr=1e308, seed=5)


def test_prototype_constant_rows():
    p = np.tile(np.array([[0.25, 0.5, 0.25]]), (4, 1))
    m = learn_prototype(p, np.zeros(4, dtype=int), task_classes=1)
    assert np.allclose(m, [[0.25, 0.5, 0.25]])


def test_prototype_symmetric_pair():
    p = np.array([[1.0, 0.0], [0.0, 1.0]])
    m = learn_prototype(p, np.zeros(2, dtype=int), task_classes=1)
    assert np.allclose(m, [[0.5, 0.5]])


def test_prototype_hand_mean():
    p = np.array([[0.7, 0.3], [0.5, 0.5]])
    m = learn_prototype(p, np.zeros(2, dtype=int), task_classes=1)
    assert np.allclose(m, [[0.6, 0.4]], atol=1e-12)


def test_prototype_rows_clamped_and_normalised():
    p = np.array([[1.0, 0.0], [1.0, 0.0]])
    m = learn_prototype(p, np.zeros(2, dtype=int), task_classes=1)
    assert np.all(m >= EPS)
    assert m.sum(axis=1) == pytest.approx([1.0])


def test_prototype_permutation_invariant():
    rng = rng_for(4, "test/proto")
    p = rng.dirichlet(np.ones(5), size=12)
    labels = np.array([0, 1, 2] * 4)
    m1 = learn_prototype(p, labels, 3)
    perm = rng.permutation(12)
    m2 = learn_prototype(p[perm], labels[perm], 3)
    assert np.array_equal(m1, m2)


def test_prototype_missing_class_names_it():
    p = np.array([[0.5, 0.5]])
    with pytest.raises(MissingClassError, match="class 1"):
        learn_prototype(p, np.array([0]), task_classes=2)


def test_split_even_counts():
    ds = small_labeled([0] * 10 + [1] * 10)
    proto, tr = split_source(ds, seed=0)
    for c in (0, 1):
        assert int(np.sum(proto.labels == c)) == 5
        assert int(np.sum(tr.labels == c)) == 5


def test_split_odd_extra_to_training():
    ds = small_labeled([0] * 7 + [1] * 4)
    proto, tr = split_source(ds, seed=0)
    assert int(np.sum(proto.labels == 0)) == 3
    assert int(np.sum(tr.labels == 0)) == 4


def test_split_deterministic():
    ds = small_labeled([0, 0, 0, 1, 1, 1, 2, 2, 2, 2])
    a = split_source(ds, seed=9)
    b = split_source(ds, seed=9)
    assert np.array_equal(a[0].inputs, b[0].inputs)
    assert np.array_equal(a[1].inputs, b[1].inputs)


def test_split_rejects_tiny_class():
    ds = small_labeled([0, 0, 1])
    with pytest.raises(ContractViolationError):
        split_source(ds, seed=0)


def test_checkpoint_round_trip_exact(tmp_path):
    params = init_params(3, 5, 2, seed=11)
    path = tmp_path / "model.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    for group in ("theta", "theta_g", "theta_h"):
        for name, arr in params.group(group).items():
            assert np.array_equal(arr, loaded.group(group)[name])


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ContractViolationError):
        load_checkpoint(path)


def test_external_checkpoint_stub():
    with pytest.raises(NotImplementedError):
        load_external_checkpoint("whatever.bin")


def test_predict_proba_heads_have_right_widths():
    params = init_params(3, 5, 2, seed=2)
    x = rng_for(0, "test/x").normal(size=(4, 3))
    assert predict_proba(params, "pretrained", x).shape == (4, 5)
    assert predict_proba(params, "task", x).shape == (4, 2)
