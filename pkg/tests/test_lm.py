import numpy as np
import pytest

from eiven import autograd as ag
from eiven import lm
from eiven.autograd import Tensor
from eiven.config import AdapterSpec, LMConfig
from eiven.errors import MergeUnsupportedError, ShapeError
from eiven.nn import weights_digest

from gradcheck import numeric_grad, relative_error

RNG = np.random.default_rng(42)
SMALL = LMConfig(blocks=2, width=32, heads=4, context=64, mlp_hidden=48)


def seq_ids(n, rng=None):
    body = (rng or RNG).integers(0, 256, size=n - 2).tolist()
    return np.array([lm.BOS] + body + [lm.EOS])


def test_tokenize_empty():
    assert lm.tokenize("") == []


def test_tokenize_ascii():
    assert lm.tokenize("AB") == [65, 66]


def test_round_trip_random_byte_strings():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        raw = bytes(rng.integers(0, 256, size=rng.integers(0, 40)).tolist())
        text = raw.decode("utf-8", errors="ignore")
        assert lm.detokenize(lm.tokenize(text)) == text


def test_detokenize_drops_specials():
    assert lm.detokenize([lm.BOS, 104, 105, lm.EOS, lm.PAD]) == "hi"


@pytest.mark.parametrize("kind", ["rep_linear_sparse", "mlp_nonlinear", "mlp_linear_dense"])
def test_adapter_identity_at_init(kind):
    spec = AdapterSpec(kind=kind, r=8, groups=4)
    adapter = lm.Adapter(spec, 32, np.random.default_rng(0))
    h = Tensor(RNG.standard_normal((5, 32)).astype(np.float32))
    out = adapter(h)
    assert np.array_equal(out.data, h.data)


def test_sparse_up_param_count():
    spec = AdapterSpec(kind="rep_linear_sparse", r=8, groups=4)
    adapter = lm.Adapter(spec, 128, np.random.default_rng(0))
    up_weights = sum(b.size for b in adapter.up_blocks)
    assert up_weights == 8 * 128 // 4  # 256 vs 1024 dense
    dense = lm.Adapter(AdapterSpec(kind="mlp_linear_dense", r=8), 128, np.random.default_rng(0))
    assert dense.up_w.size == 1024


@pytest.mark.parametrize("kind", ["rep_linear_sparse", "mlp_nonlinear", "mlp_linear_dense"])
def test_adapter_gradcheck(kind):
    spec = AdapterSpec(kind=kind, r=4, groups=2)
    adapter = lm.Adapter(spec, 8, np.random.default_rng(3), dtype=np.float64)
    # move off the zero init so the checks see curvature
    for _, t in adapter.named_tensors("a"):
        t.data = t.data + 0.3 * RNG.standard_normal(t.shape)
    h = RNG.standard_normal((3, 8))
    weight = Tensor(RNG.standard_normal((3, 8)), dtype=np.float64)

    def forward():
        return ag.reduce_sum(ag.mul(adapter(Tensor(h, dtype=np.float64)), weight))

    loss = forward()
    ag.backward(loss)
    params = list(adapter.named_tensors("a"))
    numeric = numeric_grad(lambda: forward().item(), [t.data for _, t in params])
    for (_, p), num in zip(params, numeric):
        assert relative_error(p.grad, num) < 1e-4


def test_decoder_text_only_logit_shape():
    model = lm.DecoderLM(SMALL, seed=0)
    q, r = 5, 3
    ids = seq_ids(q + r + 2)
    logits = model.forward(None, ids)
    assert logits.shape == (q + r + 2, lm.VOCAB_SIZE)


def test_zero_init_adapters_match_no_adapters():
    spec = AdapterSpec(kind="rep_linear_sparse", r=4, groups=2)
    with_adapters = lm.DecoderLM(SMALL, adapter_spec=spec, seed=0, adapter_seed=1)
    without = lm.DecoderLM(SMALL, seed=0)
    ids = seq_ids(12)
    visual = Tensor(RNG.standard_normal((2, 32)).astype(np.float32))
    a = with_adapters.forward(visual, ids)
    b = without.forward(visual, ids)
    assert np.abs(a.data - b.data).max() == 0.0


def test_decoder_deterministic():
    model = lm.DecoderLM(SMALL, seed=0)
    ids = seq_ids(10)
    visual = Tensor(RNG.standard_normal((3, 32)).astype(np.float32))
    a = model.forward(visual, ids)
    b = model.forward(visual, ids)
    assert np.array_equal(a.data, b.data)


def test_decoder_context_overflow():
    model = lm.DecoderLM(SMALL, seed=0)
    with pytest.raises(ShapeError, match="64"):
        model.forward(None, seq_ids(70))


def test_decoder_batched_matches_single():
    model = lm.DecoderLM(SMALL, adapter_spec=AdapterSpec(r=4, groups=2), seed=0)
    rng = np.random.default_rng(9)
    ids = np.stack([seq_ids(11, rng), seq_ids(11, rng)])
    visual = rng.standard_normal((2, 2, 32)).astype(np.float32)
    batched = model.forward(Tensor(visual), ids)
    for i in range(2):
        single = model.forward(Tensor(visual[i]), ids[i])
        assert np.allclose(batched.data[i], single.data, atol=1e-5)


def trained_linear_model(kind):
    spec = AdapterSpec(kind=kind, r=4, groups=2)
    model = lm.DecoderLM(SMALL, adapter_spec=spec, seed=0, adapter_seed=5)
    rng = np.random.default_rng(11)
    for adapter in model.adapters:
        for _, t in adapter.named_tensors("a"):
            t.data = (t.data + 0.2 * rng.standard_normal(t.shape)).astype(np.float32)
    return model


@pytest.mark.parametrize("kind", ["rep_linear_sparse", "mlp_linear_dense"])
def test_merge_equivalence(kind):
    model = trained_linear_model(kind)
    merged = lm.merge_linear_adapter(model)
    assert merged.adapters is None
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(50):
        ids = seq_ids(rng.integers(6, 20), rng)
        visual = Tensor(rng.standard_normal((2, 32)).astype(np.float32))
        live = model.forward(visual, ids).data
        folded = merged.forward(visual, ids).data
        worst = max(worst, float(np.abs(live - folded).max()))
    assert worst < 1e-5


def test_merge_zero_init_equals_base():
    spec = AdapterSpec(kind="rep_linear_sparse", r=4, groups=2)
    model = lm.DecoderLM(SMALL, adapter_spec=spec, seed=0)
    merged = lm.merge_linear_adapter(model)
    base = lm.DecoderLM(SMALL, seed=0)
    assert weights_digest(merged.base_named_tensors()) == weights_digest(base.base_named_tensors())


def test_merge_rejects_nonlinear():
    model = lm.DecoderLM(SMALL, adapter_spec=AdapterSpec(kind="mlp_nonlinear", r=4), seed=0)
    with pytest.raises(MergeUnsupportedError):
        lm.merge_linear_adapter(model)


def test_count_trainable_closed_form():
    spec = AdapterSpec(kind="rep_linear_sparse", r=8, groups=4)
    cfg = LMConfig()
    model = lm.DecoderLM(cfg, adapter_spec=spec, seed=0)
    d, r, g = cfg.width, spec.r, spec.groups
    per_adapter = (d * r + r) + (r * d // g) + d
    assert lm.count_trainable(model) == cfg.blocks * per_adapter


def test_count_trainable_zero():
    model = lm.DecoderLM(SMALL, seed=0)
    assert lm.count_trainable(model, projection=None) == 0


def test_base_weights_all_frozen():
    model = lm.DecoderLM(SMALL, adapter_spec=AdapterSpec(r=4, groups=2), seed=0)
    assert all(t.frozen for _, t in model.base_named_tensors())
    assert all(t.requires_grad for _, t in model.adapter_named_tensors())
