import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from reldistill.config import EncoderConfig
from reldistill.encoder import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    ContextualEncoding,
    CrossEncoder,
    TokenBatch,
    batch_pairs,
    make_batch,
    tokenize,
    tokenize_text,
)
from reldistill.errors import ConfigurationError, DegenerateInputError, InputError

TINY = EncoderConfig(layers=1, width=16, heads=2, ffn_width=32, vocab_buckets=64,
                     max_positions=32)


def test_tokenize_text():
    assert tokenize_text("Hello, World!") == ["hello", "world"]
    assert tokenize_text("x200 PRO-7 under_score") == ["x200", "pro", "7", "under", "score"]
    assert tokenize_text("!!!") == []


def test_tokenize_layout():
    row = tokenize("a", "b", max_len=8)
    assert len(row) == 5
    assert row[0] == CLS_ID and row[2] == SEP_ID and row[4] == SEP_ID
    batch = make_batch([row], pad_to=8)
    assert batch.attention_mask[0].tolist() == [1, 1, 1, 1, 1, 0, 0, 0]


def test_tokenize_deterministic():
    assert tokenize("red shoes", "blue shoes", 16) == tokenize("red shoes", "blue shoes", 16)


def test_tokenize_truncates_title_first():
    title = " ".join(f"w{i}" for i in range(200))
    row = tokenize("short query here", title, max_len=128)
    assert len(row) == 128
    assert row[-1] == SEP_ID
    # the query survives intact: [CLS] q1 q2 q3 [SEP]
    q = tokenize("short query here", "x", max_len=128)
    assert row[:4] == q[:4]


def test_tokenize_truncates_query_when_needed():
    query = " ".join(f"q{i}" for i in range(50))
    row = tokenize(query, "title words", max_len=16)
    assert len(row) == 16
    assert row[-1] == SEP_ID
    # the title keeps at least one token
    assert row[-2] != SEP_ID


def test_tokenize_errors():
    with pytest.raises(ConfigurationError):
        tokenize("a", "b", max_len=3)
    with pytest.raises(DegenerateInputError):
        tokenize("", "b", max_len=8)
    with pytest.raises(DegenerateInputError):
        tokenize("?!", "b", max_len=8)


@settings(max_examples=50, deadline=None)
@given(
    q=st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd")), min_size=1),
    t=st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd")), min_size=1),
    max_len=st.integers(4, 64),
)
def test_tokenize_never_exceeds_budget(q, t, max_len):
    try:
        row = tokenize(q, t, max_len)
    except DegenerateInputError:
        return
    assert 4 <= len(row) <= max_len
    assert row[0] == CLS_ID and row[-1] == SEP_ID


def test_vocabulary_spec_roundtrip(tmp_path):
    from reldistill.encoder import load_vocabulary_spec, write_vocabulary_spec

    path = tmp_path / "vocab.json"
    write_vocabulary_spec(path, 8192)
    assert load_vocabulary_spec(path) == 8192
    import json

    spec = json.loads(path.read_text())
    spec["special_tokens"]["cls"] = 9
    path.write_text(json.dumps(spec))
    with pytest.raises(ConfigurationError):
        load_vocabulary_spec(path)


def test_token_batch_invariants():
    with pytest.raises(InputError):
        TokenBatch(torch.zeros(1, 4, dtype=torch.long),
                   torch.tensor([[1, 0, 1, 0]]), (2,))
    with pytest.raises(InputError):
        TokenBatch(torch.zeros(1, 4, dtype=torch.long),
                   torch.tensor([[1, 1, 0, 0]]), (3,))
    batch = make_batch([[CLS_ID, 5, SEP_ID]], pad_to=5)
    assert batch.lengths == (3,)
    assert batch.token_ids[0, 3:].tolist() == [PAD_ID, PAD_ID]


def test_encode_shapes():
    cfg = EncoderConfig(layers=2, width=64, heads=4, ffn_width=128, vocab_buckets=256,
                        max_positions=16)
    model = CrossEncoder(cfg, seed=0)
    batch = batch_pairs([("red mug", "blue mug"), ("socks", "warm socks pack")],
                        max_len=16, buckets=256, pad_to=16)
    out = model(batch.token_ids, batch.attention_mask)
    assert isinstance(out, ContextualEncoding)
    assert out.hidden.shape == (2, 16, 64)
    assert out.cls_vector.shape == (2, 64)
    assert torch.equal(out.cls_vector, out.hidden[:, 0, :])
    assert torch.isfinite(out.hidden).all()


def test_encode_batch_independence():
    model = CrossEncoder(TINY, seed=1)
    batch = batch_pairs([("a b c", "d e"), ("x y", "z w q"), ("one", "two")],
                        max_len=12, buckets=TINY.vocab_buckets, pad_to=12)
    out = model(batch.token_ids, batch.attention_mask).hidden
    perm = [2, 0, 1]
    out_perm = model(batch.token_ids[perm], batch.attention_mask[perm]).hidden
    assert torch.allclose(out[perm], out_perm, atol=0, rtol=0)


def test_padding_invariance():
    model = CrossEncoder(TINY, seed=2, dtype=torch.float64)
    rows = [tokenize("red mug", "blue mug", 12, TINY.vocab_buckets)]
    batch = make_batch(rows, pad_to=12)
    out1 = model(batch.token_ids, batch.attention_mask).hidden
    ids2 = batch.token_ids.clone()
    ids2[0, batch.lengths[0]:] = 7  # junk ids in padded slots
    out2 = model(ids2, batch.attention_mask).hidden
    L = batch.lengths[0]
    assert torch.allclose(out1[0, :L], out2[0, :L], atol=1e-6)


def test_init_determinism_and_forward_stability():
    a = CrossEncoder(TINY, seed=7, dtype=torch.float64)
    b = CrossEncoder(TINY, seed=7, dtype=torch.float64)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        assert torch.equal(pa, pb)
    c = CrossEncoder(TINY, seed=8, dtype=torch.float64)
    assert any(not torch.equal(pa, pc) for pa, pc in
               zip(a.parameters(), c.parameters()))
    batch = batch_pairs([("q tokens", "t tokens")], max_len=10,
                        buckets=TINY.vocab_buckets)
    first = a(batch.token_ids, batch.attention_mask).hidden
    second = a(batch.token_ids, batch.attention_mask).hidden
    assert torch.equal(first, second)


def test_encode_input_errors():
    model = CrossEncoder(TINY, seed=0)
    bad = torch.full((1, 4), TINY.vocab_buckets + 10, dtype=torch.long)
    mask = torch.ones(1, 4, dtype=torch.long)
    with pytest.raises(InputError):
        model(bad, mask)
    too_long = torch.zeros(1, TINY.max_positions + 1, dtype=torch.long)
    with pytest.raises(InputError):
        model(too_long, torch.ones_like(too_long))


def test_encoder_gradients_flow():
    # finite-difference check of a scalar readout of the pooled vector
    from oracles import finite_difference_grads, max_relative_error

    cfg = EncoderConfig(layers=1, width=8, heads=2, ffn_width=16, vocab_buckets=16,
                        max_positions=8)
    model = CrossEncoder(cfg, seed=3, dtype=torch.float64)
    batch = batch_pairs([("a b", "c d e")], max_len=8, buckets=cfg.vocab_buckets)
    probe = torch.linspace(-1, 1, cfg.width, dtype=torch.float64)

    def loss_fn():
        out = model(batch.token_ids, batch.attention_mask)
        return (out.cls_vector[0] * probe).sum()

    loss = loss_fn()
    loss.backward()
    params = list(model.parameters())
    analytic = [p.grad.numpy().copy() for p in params]
    numeric = finite_difference_grads(loss_fn, params)
    assert max_relative_error(analytic, numeric) < 1e-4
