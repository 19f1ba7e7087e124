import numpy as np
import pytest
import torch

from segdense.model import (BackboneConfig, PretrainedWeightsError, Preprocess, backbone_forward,
                            bilinear_kernel, branch_predict, build_model, fuse, load_checkpoint,
                            read_checkpoint_meta, save_checkpoint, upsampler)


def deconv_out(n_in, kernel, stride, padding):
    return (n_in - 1) * stride - 2 * padding + kernel


def test_backbone_config_invariants():
    with pytest.raises(ValueError):
        BackboneConfig(block_layer_counts=(6, 12, 24))
    with pytest.raises(ValueError):
        BackboneConfig(variant="full", growth_rate=16)
    tiny = BackboneConfig.tiny()
    assert tiny.block_layer_counts == (2, 2, 2, 2) and tiny.growth_rate == 4
    full = BackboneConfig.full()
    assert full.block_layer_counts == (6, 12, 24, 16) and full.growth_rate == 32


@pytest.mark.parametrize("hw,expected", [
    ((224, 224), [(56, 56), (28, 28), (14, 14), (7, 7)]),
    ((320, 256), [(80, 64), (40, 32), (20, 16), (10, 8)]),
])
def test_tap_strides(tiny_model, hw, expected):
    taps = backbone_forward(tiny_model, torch.zeros(1, 3, *hw))
    assert [tuple(t.shape[-2:]) for t in taps] == expected
    assert [t.shape[1] for t in taps] == tiny_model.tap_channels


def test_indivisible_input(tiny_model):
    with pytest.raises(ValueError, match="divisible by 32"):
        tiny_model(torch.zeros(1, 3, 100, 100))


@pytest.mark.parametrize("tap_index,size,kernel,stride,pad", [(3, 7, 16, 8, 4), (1, 28, 4, 2, 1), (2, 14, 8, 4, 2)])
def test_branch_upsampling(tiny_model, tap_index, size, kernel, stride, pad):
    head = tiny_model.heads[f"tap{tap_index + 1}"]
    assert head.up.kernel_size == (kernel, kernel) and head.up.stride == (stride, stride)
    assert head.up.padding == (pad, pad)
    tap = torch.randn(1, tiny_model.tap_channels[tap_index], size, size)
    out = branch_predict(tiny_model, tap, tap_index)
    n = deconv_out(size, kernel, stride, pad)
    assert n == 56 and tuple(out.shape) == (1, 1, 56, 56)


def test_stride4_branch_has_no_deconv(tiny_model):
    head = tiny_model.heads["tap1"]
    assert head.up is None
    tap = torch.randn(2, tiny_model.tap_channels[0], 56, 56)
    assert tuple(branch_predict(tiny_model, tap, 0).shape) == (2, 1, 56, 56)


def test_final_upsampler_geometry(tiny_model):
    up = tiny_model.final_up
    assert (up.kernel_size, up.stride, up.padding) == ((8, 8), (4, 4), (2, 2))
    assert deconv_out(56, 8, 4, 2) == 224


def test_zero_init_gives_half(tiny_model):
    out = tiny_model(torch.randn(2, 3, 224, 224))
    assert tuple(out.shape) == (2, 1, 224, 224)
    assert torch.all(out == 0.5)


def test_forward_range_and_size():
    m = build_model(BackboneConfig.tiny(), seed=1)
    with torch.no_grad():
        for head in m.heads.values():
            head.score.weight.normal_(0, 1.0, generator=torch.Generator().manual_seed(0))
    for hw in [(224, 224), (320, 256)]:
        out = m(torch.randn(1, 3, *hw))
        assert tuple(out.shape[-2:]) == hw
        assert out.min() >= 0 and out.max() <= 1


def test_seed_determinism():
    a = build_model(BackboneConfig.tiny(), seed=3).state_dict()
    b = build_model(BackboneConfig.tiny(), seed=3).state_dict()
    c = build_model(BackboneConfig.tiny(), seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not torch.equal(a["features.conv0.weight"], c["features.conv0.weight"])


def test_build_model_leaves_global_rng_alone():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    build_model(BackboneConfig.tiny(), seed=9)
    assert torch.equal(torch.rand(3), expected)


@pytest.mark.parametrize("branches", [1, 2, 3, 4])
def test_branch_count(branches):
    m = build_model(BackboneConfig.tiny(), branches=branches, seed=0)
    assert m.active_taps == tuple(range(4 - branches, 4))
    assert len(m.branch_maps(torch.zeros(1, 3, 64, 64))) == branches


def test_single_branch_is_weighted_deepest_map():
    m = build_model(BackboneConfig.tiny(), branches=1, fusion_weights=(1, 1, 1, 2.5), seed=0)
    with torch.no_grad():
        m.heads["tap4"].score.weight.normal_(generator=torch.Generator().manual_seed(1))
    x = torch.randn(1, 3, 64, 64)
    (i1,) = m.branch_maps(x)
    torch.testing.assert_close(m.forward_logits(x), m.final_up(2.5 * i1), rtol=0, atol=0)


def test_fuse_examples():
    g = torch.Generator().manual_seed(0)
    maps = [torch.randn(2, 1, 8, 8, generator=g) for _ in range(4)]
    torch.testing.assert_close(fuse(maps, (1, 0, 0, 0)), maps[0], rtol=0, atol=0)
    zeros = [torch.zeros(1, 1, 4, 4)] * 4
    assert torch.all(fuse(zeros, (0.3, 1, 2, 3)) == 0)
    brute = torch.zeros_like(maps[0])
    for b in range(2):
        for i in range(8):
            for j in range(8):
                brute[b, 0, i, j] = sum(float(m[b, 0, i, j]) for m in maps)
    torch.testing.assert_close(fuse(maps, (1, 1, 1, 1)), brute, rtol=1e-6, atol=1e-6)


def test_fuse_linearity_and_permutation():
    g = torch.Generator().manual_seed(1)
    maps = [torch.randn(1, 1, 6, 6, dtype=torch.float64, generator=g) for _ in range(4)]
    w = (0.5, 1.5, -2.0, 3.0)
    torch.testing.assert_close(fuse([3.0 * m for m in maps], w), 3.0 * fuse(maps, w))
    perm = [2, 0, 3, 1]
    torch.testing.assert_close(fuse([maps[p] for p in perm], [w[p] for p in perm]), fuse(maps, w))


def test_fuse_errors():
    with pytest.raises(ValueError):
        fuse([torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 5, 4)], (1, 1))
    with pytest.raises(ValueError):
        fuse([torch.zeros(1, 1, 4, 4)], (1, 1))


def test_fusion_weights_not_trainable(tiny_model):
    names = {n for n, _ in tiny_model.named_parameters()}
    assert "fusion_weights" not in names
    assert "fusion_weights" in tiny_model.state_dict()


def test_bilinear_upsampler_interpolates():
    k = bilinear_kernel(4)
    torch.testing.assert_close(k[0], torch.tensor([0.0625, 0.1875, 0.1875, 0.0625], dtype=torch.float64))
    up = upsampler(2)
    ramp = torch.arange(8, dtype=torch.float32).view(1, 1, 1, 8).expand(1, 1, 8, 8)
    out = up(ramp)[0, 0, 4]
    # interior of a linear ramp stays linear under bilinear upsampling
    d = torch.diff(out[2:-2])
    torch.testing.assert_close(d, torch.full_like(d, 0.5))


def test_preprocess():
    img = np.full((2, 32, 32), 255, dtype=np.uint8)
    x = Preprocess()(img)
    assert tuple(x.shape) == (2, 3, 32, 32)
    expected = [(1 - m) / s for m, s in zip(Preprocess().mean, Preprocess().std)]
    torch.testing.assert_close(x[0, :, 0, 0], torch.tensor(expected, dtype=torch.float32))


def test_checkpoint_round_trip(tmp_path, tiny_model):
    with torch.no_grad():
        for p in tiny_model.parameters():
            p.add_(torch.randn(p.shape, generator=torch.Generator().manual_seed(p.numel())))
    a = save_checkpoint(tiny_model, tmp_path / "a.safetensors", {"epoch": 3})
    b = save_checkpoint(tiny_model, tmp_path / "b.safetensors", {"epoch": 3})
    assert a.read_bytes() == b.read_bytes()
    back = load_checkpoint(a)
    sd0, sd1 = tiny_model.state_dict(), back.state_dict()
    assert sd0.keys() == sd1.keys()
    assert all(torch.equal(sd0[k], sd1[k]) for k in sd0)
    meta = read_checkpoint_meta(a)
    assert meta["backbone"]["variant"] == "tiny" and meta["branches"] == 4 and meta["extra"]["epoch"] == 3
    assert meta["preprocess"]["mean"] == list(tiny_model.preprocess.mean)


def test_checkpoint_float64_round_trip(tmp_path):
    m = build_model(BackboneConfig.tiny(), branches=2, seed=5).double()
    p = save_checkpoint(m, tmp_path / "d.safetensors")
    back = load_checkpoint(p)
    assert back.final_up.weight.dtype == torch.float64
    assert all(torch.equal(x, y) for x, y in zip(m.state_dict().values(), back.state_dict().values()))


def test_pretrained_missing_file(tmp_path):
    cfg = BackboneConfig.tiny(pretrained_init=True, pretrained_path=str(tmp_path / "nope.pth"))
    with pytest.raises(PretrainedWeightsError, match="not found"):
        build_model(cfg)
    with pytest.raises(PretrainedWeightsError):
        build_model(BackboneConfig.tiny(pretrained_init=True))


@pytest.fixture(scope="module")
def densenet121_weights(tmp_path_factory):
    tv = pytest.importorskip("torchvision")
    net = tv.models.densenet121(weights=None)
    path = tmp_path_factory.mktemp("pre") / "densenet121.pth"
    torch.save(net.state_dict(), path)
    return path, net.state_dict()


def test_pretrained_loads_into_full(densenet121_weights):
    path, ref = densenet121_weights
    m = build_model(BackboneConfig.full(pretrained_init=True, pretrained_path=str(path)), seed=0)
    own = m.state_dict()
    for k, v in own.items():
        if k.startswith("features."):
            assert torch.equal(v, ref[k]), k


def test_pretrained_shape_mismatch(densenet121_weights):
    path, _ = densenet121_weights
    with pytest.raises(PretrainedWeightsError, match="mismatch"):
        build_model(BackboneConfig.tiny(pretrained_init=True, pretrained_path=str(path)))
