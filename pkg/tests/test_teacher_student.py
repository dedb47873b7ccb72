import numpy as np
import pytest
import torch
from torch import nn

from wsvos.pooling import PoolingConfig, pool
from wsvos.student import StudentHead, student_forward, student_stcam
from wsvos.teacher import TeacherHead, class_activation_map, seeded_dropout, teacher_forward, teacher_stcam

CFG = PoolingConfig()


def tokens(seed, shape=(1, 6, 4, 4, 8)):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g)


def make_teacher(**kw):
    torch.manual_seed(0)
    return TeacherHead(8, 3, hidden_width=16, out_channels=12, **kw)


def make_student(**kw):
    torch.manual_seed(1)
    return StudentHead(8, 3, hidden_width=16, out_channels=12, **kw)


def dense_cam_oracle(feats, weight):
    # feats (D, h, w, C), weight (N, C)
    D, h, w, C = feats.shape
    out = np.zeros((D, h, w, weight.shape[0]))
    for d in range(D):
        for y in range(h):
            for x in range(w):
                for n in range(weight.shape[0]):
                    out[d, y, x, n] = max(0.0, sum(feats[d, y, x, c] * weight[n, c] for c in range(C)))
    return out


def test_teacher_eval_is_deterministic():
    head = make_teacher()
    t = tokens(0)
    a = teacher_forward(t, head, False, CFG)
    b = teacher_forward(t, head, False, CFG)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])


def test_teacher_train_mode_reproducible_with_generator():
    head = make_teacher()
    t = tokens(0)
    a = teacher_forward(t, head, True, CFG, torch.Generator().manual_seed(5))
    b = teacher_forward(t, head, True, CFG, torch.Generator().manual_seed(5))
    assert torch.equal(a[1], b[1])


def test_teacher_no_downsampling_when_prob_zero():
    head = make_teacher(downsample_prob=0.0, dropout=0.0)
    seen = []
    for layer in head.layers:
        layer.register_forward_hook(lambda m, i, o: seen.append(tuple(o.shape[2:4])))
    head.train()
    head.features(tokens(0), torch.Generator().manual_seed(0))
    assert seen == [(4, 4)] * 4
    # with no stochastic step and no dropout, train equals eval
    torch.testing.assert_close(head.features(tokens(0)), head.eval().features(tokens(0)), rtol=0, atol=0)


def test_teacher_downsampling_shrinks_grid_and_restores_size():
    head = make_teacher(downsample_prob=1.0, dropout=0.0)
    seen = []
    for layer in head.layers:
        layer.register_forward_hook(lambda m, i, o: seen.append(tuple(o.shape[2:4])))
    head.train()
    feats = head.features(tokens(0, (1, 2, 8, 8, 8)), torch.Generator().manual_seed(0))
    # 8 -> 4 -> 2, then the guard keeps the grid at 2x2
    assert seen == [(8, 8), (4, 4), (2, 2), (2, 2)]
    assert feats.shape == (1, 2, 8, 8, 12)


def test_teacher_constant_tokens_give_constant_features():
    head = make_teacher().eval()
    t = torch.ones(1, 3, 4, 4, 8) * 0.3
    feats, logits = head(t, CFG)
    assert torch.allclose(feats, feats[0, 0, 0, 0].expand_as(feats))
    for k1, k2 in [(0.1, 0.4), (1.0, 1.0), (0.5, 0.2)]:
        pooled = pool(feats, PoolingConfig(k1_fraction=k1, k2_fraction=k2))
        torch.testing.assert_close(pooled[0], feats[0, 0, 0, 0])


def test_teacher_logits_are_pool_then_project():
    head = make_teacher().eval()
    feats, logits = head(tokens(3), CFG)
    torch.testing.assert_close(logits, head.classifier(pool(feats, CFG)))


def test_teacher_frame_locality():
    head = make_teacher().eval()
    t = tokens(0)
    t2 = t.clone()
    t2[0, 2] += 1.0
    m1 = head.cam(head.features(t))
    m2 = head.cam(head.features(t2))
    changed = (m1 != m2).flatten(2).any(-1)[0]
    assert changed.tolist() == [False, False, True, False, False, False]


def test_teacher_permutation_equivariance():
    head = make_teacher().eval()
    t = tokens(4)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(0))
    f1, l1 = head(t, CFG)
    f2, l2 = head(t[:, perm], CFG)
    assert torch.equal(f2, f1[:, perm])
    assert torch.equal(l1, l2)


def test_cam_zero_and_identity_projection():
    clf = nn.Linear(4, 1)
    assert torch.equal(class_activation_map(torch.zeros(2, 3, 3, 4), clf), torch.zeros(2, 3, 3, 1))
    with torch.no_grad():
        clf.weight.zero_()
        clf.weight[0, 0] = 1.0
        clf.bias.fill_(5.0)  # bias never enters the CAM
    f = torch.randn(2, 3, 3, 4)
    torch.testing.assert_close(class_activation_map(f, clf)[..., 0], torch.relu(f[..., 0]))


@pytest.mark.parametrize("cam_fn,maker", [(teacher_stcam, make_teacher), (student_stcam, make_student)])
def test_cam_dense_loop_oracle(cam_fn, maker):
    head = maker()
    g = torch.Generator().manual_seed(2)
    feats = torch.randn(2, 2, 2, 12, generator=g, dtype=torch.float64)
    head = head.double()
    got = cam_fn(feats, head).detach().numpy()
    np.testing.assert_allclose(got, dense_cam_oracle(feats.numpy(), head.classifier.weight.detach().numpy()),
                               atol=1e-6)


def test_stcam_channel_mismatch():
    with pytest.raises(ValueError):
        teacher_stcam(torch.zeros(2, 2, 2, 5), make_teacher())
    with pytest.raises(ValueError):
        student_stcam(torch.zeros(2, 2, 2, 5), make_student())


def test_teacher_rejects_bad_probability_and_channels():
    with pytest.raises(ValueError):
        TeacherHead(8, 3, dropout=1.5)
    with pytest.raises(ValueError):
        TeacherHead(8, 3, downsample_prob=-0.1)
    with pytest.raises(ValueError):
        make_teacher().features(torch.zeros(1, 2, 4, 4, 7))


def test_seeded_dropout():
    x = torch.ones(1000)
    assert torch.equal(seeded_dropout(x, 0.5, False), x)
    assert torch.equal(seeded_dropout(x, 1.0, True), torch.zeros(1000))
    a = seeded_dropout(x, 0.5, True, torch.Generator().manual_seed(1))
    b = seeded_dropout(x, 0.5, True, torch.Generator().manual_seed(1))
    assert torch.equal(a, b)
    assert set(a.unique().tolist()) <= {0.0, 2.0}


def test_student_eval_is_deterministic_and_shape_matches_teacher():
    s, t = make_student(), make_teacher()
    x = tokens(0)
    a = student_forward(x, s, False, CFG)
    b = student_forward(x, s, False, CFG)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    ft, _ = teacher_forward(x, t, False, CFG)
    assert s.cam(a[0]).shape == t.cam(ft).shape == (1, 6, 4, 4, 3)


@pytest.mark.parametrize("padding_mode", ["zeros", "replicate"])
def test_student_receptive_field(padding_mode):
    # four layers of temporal extent 3: frame 0 reaches indices 0..4 only
    s = make_student(padding_mode=padding_mode).eval()
    assert s.temporal_receptive_field == 9
    x = tokens(0, (1, 8, 4, 4, 8))
    x2 = x.clone()
    x2[0, 0] += 2.0
    changed = (s.features(x) != s.features(x2)).flatten(2).any(-1)[0].tolist()
    assert changed[5:] == [False, False, False]
    assert changed[4]


def test_student_zero_tokens_give_bias_logits():
    s = make_student().eval()
    with torch.no_grad():
        for conv in s.convs:
            conv.bias.zero_()
    feats, logits = s(torch.zeros(1, 4, 3, 3, 8), CFG)
    assert torch.count_nonzero(feats) == 0
    torch.testing.assert_close(logits[0], s.classifier.bias)


def test_student_mixes_frames_under_permutation():
    s = make_student().eval()
    x = tokens(0)
    perm = torch.tensor([5, 4, 3, 2, 1, 0])
    f1, _ = s(x, CFG)
    f2, _ = s(x[:, perm], CFG)
    assert not torch.equal(f2, f1[:, perm])


def test_student_rejects_bad_geometry():
    with pytest.raises(ValueError):
        StudentHead(8, 3, temporal_kernel=1)
    with pytest.raises(ValueError):
        StudentHead(8, 3, temporal_kernel=4)
    with pytest.raises(ValueError):
        StudentHead(8, 3, spatial_kernel=2)


def test_student_has_more_parameters_than_teacher_at_default_widths():
    def count(m):
        return sum(p.numel() for p in m.parameters())
    assert count(StudentHead(64, 3)) > count(TeacherHead(64, 3))
