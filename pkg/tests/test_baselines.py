"""Single-task and transfer baselines: joint-class pairing, trunk carry-over,
labeled-subset filtering, and stage wiring."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmtl.baselines import (
    PRETEXT_HEAD,
    TransferPlan,
    carry_trunk,
    joint_class,
    labeled_indices,
    single_task_net,
    split_joint_class,
    train_single_task,
    train_transfer,
)
from flowmtl.errors import ConfigError, DataFormatError
from flowmtl.labels import TaskLabels
from flowmtl.model import (
    AdamConfig,
    Architecture,
    MultiHeadNet,
    TrainConfig,
    mtl_architecture,
)

K = 30


def tiny_cfg(epochs=2, seed=0):
    return TrainConfig(epochs=epochs, batch_size=8, seed=seed,
                       adam=AdamConfig(lr=1e-3))


def make_data(n, seed=0, labeled_every=2):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, K, 2))
    labels = [TaskLabels(y_bw=int(rng.integers(1, 6)),
                         y_dur=int(rng.integers(1, 6)),
                         y_traffic=int(rng.integers(1, 6))
                         if i % labeled_every == 0 else None)
              for i in range(n)]
    return x, labels


def test_joint_class_enumerates_all_pairs():
    seen = [joint_class(bw, dur, 5) for bw in range(1, 6) for dur in range(1, 6)]
    assert sorted(seen) == list(range(1, 26))
    for bw in range(1, 6):
        for dur in range(1, 6):
            assert split_joint_class(joint_class(bw, dur, 5), 5) == (bw, dur)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_joint_class_bijection(n_bw, n_dur, data):
    y_bw = data.draw(st.integers(1, n_bw))
    y_dur = data.draw(st.integers(1, n_dur))
    joint = joint_class(y_bw, y_dur, n_dur)
    assert 1 <= joint <= n_bw * n_dur
    assert split_joint_class(joint, n_dur) == (y_bw, y_dur)


def test_labeled_indices():
    labels = [TaskLabels(1, 1, 3), TaskLabels(1, 1, None), TaskLabels(2, 2, 1)]
    assert labeled_indices(labels).tolist() == [0, 2]


def test_single_task_net_shares_trunk_shape():
    net = single_task_net(K, "duration", 5, seed=3)
    assert net.arch.heads == (("duration", 5),)
    assert net.arch.conv_stages == mtl_architecture(K).conv_stages
    trunk_names = {n for n in net.params() if n.startswith("trunk.")}
    mtl_names = {n for n in MultiHeadNet(mtl_architecture(K), seed=3).params()
                 if n.startswith("trunk.")}
    assert trunk_names == mtl_names


def test_single_task_traffic_trains_on_labeled_subset_only():
    x, labels = make_data(24, seed=1)
    keep = labeled_indices(labels)
    model_a, hist_a = train_single_task(x, labels, "traffic", 5, tiny_cfg(),
                                        model_seed=4)
    subset = [labels[i] for i in keep]
    model_b, hist_b = train_single_task(x[keep], subset, "traffic", 5,
                                        tiny_cfg(), model_seed=4)
    for name, arr in model_a.params().items():
        assert np.array_equal(arr, model_b.params()[name]), name
    assert [h.total for h in hist_a] == [h.total for h in hist_b]
    assert all(h.n_samples == keep.size for h in hist_a)


def test_single_task_bandwidth_uses_every_sample():
    x, labels = make_data(20, seed=2)
    _, hist = train_single_task(x, labels, "bandwidth", 5, tiny_cfg(epochs=1))
    assert hist[0].n_samples == 20
    assert set(hist[0].per_head) == {"bandwidth"}


def test_single_task_traffic_without_labels_raises():
    x, labels = make_data(10, seed=3)
    stripped = [TaskLabels(l.y_bw, l.y_dur, None) for l in labels]
    with pytest.raises(ConfigError, match="labeled"):
        train_single_task(x, stripped, "traffic", 5, tiny_cfg())


def test_single_task_unknown_task_raises():
    x, labels = make_data(10, seed=4)
    with pytest.raises(ConfigError, match="unknown task"):
        train_single_task(x, labels, "latency", 5, tiny_cfg())


def test_single_task_row_mismatch_raises():
    x, labels = make_data(10, seed=5)
    with pytest.raises(DataFormatError, match="rows"):
        train_single_task(x, labels[:-1], "bandwidth", 5, tiny_cfg())


def test_carry_trunk_is_bitwise_and_leaves_heads_alone():
    src = MultiHeadNet(mtl_architecture(K), seed=10)
    dst = single_task_net(K, "traffic", 5, seed=11)
    head_before = {n: a.copy() for n, a in dst.params().items()
                   if not n.startswith("trunk.")}
    carry_trunk(src, dst)
    for name, arr in src.params().items():
        if name.startswith("trunk."):
            assert np.array_equal(arr, dst.params()[name]), name
    for name, arr in head_before.items():
        assert np.array_equal(arr, dst.params()[name]), name


def test_carry_trunk_shape_mismatch_raises():
    src = MultiHeadNet(mtl_architecture(60), seed=0)
    dst = MultiHeadNet(mtl_architecture(K), seed=0)
    with pytest.raises(ConfigError, match="trunk"):
        carry_trunk(src, dst)


def test_transfer_stages_and_seeding():
    x, labels = make_data(24, seed=6)
    plan = TransferPlan(stage1=tiny_cfg(seed=0), stage2=tiny_cfg(seed=1))
    model, hist1, hist2 = train_transfer(x, labels, plan, model_seed=7)

    assert model.arch.heads == (("traffic", 5),)
    assert set(hist1[0].per_head) == {PRETEXT_HEAD}
    assert set(hist2[0].per_head) == {"traffic"}
    assert hist1[0].n_samples == 24
    assert hist2[0].n_samples == labeled_indices(labels).size

    # replaying the two stages by hand reproduces the model bitwise
    from flowmtl.model import train

    base = mtl_architecture(K)
    pretext = MultiHeadNet(Architecture(k=K, heads=((PRETEXT_HEAD, 25),),
                                        conv_stages=base.conv_stages), seed=7)
    joint = np.array([joint_class(l.y_bw, l.y_dur, 5) - 1 for l in labels])
    train(pretext, x, {PRETEXT_HEAD: joint},
          {PRETEXT_HEAD: np.ones(len(labels))}, plan.stage1)
    keep = labeled_indices(labels)
    manual = MultiHeadNet(Architecture(k=K, heads=(("traffic", 5),),
                                       conv_stages=base.conv_stages), seed=8)
    carry_trunk(pretext, manual)
    y = np.array([labels[i].y_traffic - 1 for i in keep])
    train(manual, x[keep], {"traffic": y}, {"traffic": np.ones(keep.size)},
          plan.stage2)
    for name, arr in manual.params().items():
        assert np.array_equal(arr, model.params()[name]), name


def test_transfer_without_labels_raises():
    x, labels = make_data(10, seed=8)
    stripped = [TaskLabels(l.y_bw, l.y_dur, None) for l in labels]
    plan = TransferPlan(stage1=tiny_cfg(epochs=1), stage2=tiny_cfg(epochs=1))
    with pytest.raises(ConfigError, match="labeled"):
        train_transfer(x, stripped, plan)


def test_transfer_row_mismatch_raises():
    x, labels = make_data(10, seed=9)
    plan = TransferPlan(stage1=tiny_cfg(epochs=1), stage2=tiny_cfg(epochs=1))
    with pytest.raises(DataFormatError, match="rows"):
        train_transfer(x[:-1], labels, plan)
