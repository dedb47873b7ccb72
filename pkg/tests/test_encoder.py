import numpy as np
import pytest
import torch

from wsvos.encoder import VideoClip, check_patch_divisible, encode, make_toy_backbone


def clip(D=16, H=64, W=64, seed=0, **kw):
    rng = np.random.default_rng(seed)
    return VideoClip(frames=rng.random((D, H, W, 3)), label=[1, 0, 1], clip_id="c", **kw)


def test_token_grid_shape():
    tokens = encode(clip(), make_toy_backbone(patch_size=8, embed_dim=64))
    assert tuple(tokens.shape) == (16, 8, 8, 64)


def test_token_grid_shape_large_patch():
    c = VideoClip(frames=np.zeros((8, 256, 256, 3)), label=[1])
    assert tuple(encode(c, make_toy_backbone(patch_size=16, embed_dim=4, depth=0)).shape) == (8, 16, 16, 4)


def test_backbone_is_seeded():
    a, b = make_toy_backbone(seed=3), make_toy_backbone(seed=3)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    c = make_toy_backbone(seed=4)
    assert not torch.equal(next(a.parameters()), next(c.parameters()))


def test_backbone_does_not_disturb_global_rng():
    torch.manual_seed(0)
    expected = torch.rand(3)
    torch.manual_seed(0)
    make_toy_backbone(seed=9)
    assert torch.equal(torch.rand(3), expected)


def test_frame_permutation_permutes_tokens():
    bb = make_toy_backbone()
    c = clip(D=6)
    perm = np.array([3, 1, 5, 0, 2, 4])
    permuted = VideoClip(frames=c.frames[perm], label=c.label)
    torch.testing.assert_close(encode(permuted, bb), encode(c, bb)[perm], rtol=0, atol=0)


def test_per_frame_isolation():
    bb = make_toy_backbone()
    c = clip(D=5)
    frames = c.frames.copy()
    frames[2] = 1.0 - frames[2]
    changed = VideoClip(frames=frames, label=c.label)
    diff = (encode(c, bb) != encode(changed, bb)).flatten(1).any(1).tolist()
    assert diff == [False, False, True, False, False]


def test_indivisible_frame_size():
    with pytest.raises(ValueError, match="not divisible"):
        encode(clip(H=60), make_toy_backbone(patch_size=8))
    with pytest.raises(ValueError):
        check_patch_divisible(64, 63, 8)


def test_backbone_failure_is_wrapped():
    bb = make_toy_backbone(in_channels=1)
    with pytest.raises(RuntimeError, match="clip 'c'"):
        encode(clip(), bb)


def test_invalid_backbone_settings():
    with pytest.raises(ValueError):
        make_toy_backbone(patch_size=0)
    with pytest.raises(ValueError):
        make_toy_backbone(depth=-1)


def test_videoclip_validation():
    with pytest.raises(ValueError):
        VideoClip(frames=np.zeros((4, 8)), label=[1])
    with pytest.raises(ValueError):
        VideoClip(frames=np.zeros((4, 8, 8, 3)), label=[2])
    with pytest.raises(ValueError):
        VideoClip(frames=np.zeros((4, 8, 8, 3)), label=[1, 0], masks=np.zeros((4, 8, 8, 3)))


def test_videoclip_derives_frame_labels_from_masks():
    masks = np.zeros((3, 4, 4, 2), bool)
    masks[1, 0, 0, 1] = True
    c = VideoClip(frames=np.zeros((3, 4, 4)), label=[0, 1], masks=masks)
    assert c.frames.shape == (3, 4, 4, 1)
    assert c.frame_labels.tolist() == [[0, 0], [0, 1], [0, 0]]
