"""Instruction, corpus, prompt and transparency-switch tests."""

import json
import math

import numpy as np
import pytest
import torch

from deobstruct.core.encoders import ToyImageEncoder, ToyTextEncoder, build_encoders, tokenize
from deobstruct.core.errors import LoadError, ParameterError, ShapeError, ValidationError
from deobstruct.core.imaging import AlphaMask, MaskKind, SceneImage, TransparencyClass, cutout
from deobstruct.core.prompting import (
    Embedding,
    EmbeddingSource,
    Instruction,
    InstructionCorpus,
    PromptMode,
    build_prompt,
    category_margin,
    classify_transparency,
    cosine_sim,
    decide_transparency,
    embed_image,
    embed_text,
    finetune_text_encoder,
    load_corpus,
    prompt_tokens,
    select_tokens,
    softmax2,
    supervised_contrastive_loss,
    transparency_scores,
)


def _emb(vector, source=EmbeddingSource.TEXT):
    return Embedding(np.asarray(vector, dtype=float), source)


def _image(seed=0):
    return SceneImage(np.random.default_rng(seed).random((32, 32, 3)))


def _small_corpus():
    return InstructionCorpus(
        ("remove the fence", "take away the wire mesh", "erase the brush stroke"),
        ("remove the raindrops", "clear the lens flare", "wipe off the snow"),
    )


# -- instructions and tokens --------------------------------------------------

def test_instruction_rejects_empty_text():
    with pytest.raises(ValidationError):
        Instruction("   ")


def test_tokenize_keeps_hyphen_parts():
    assert tokenize("Remove the semi-transparent rain!") == [
        "remove", "the", "semi-transparent", "semi", "transparent", "rain",
    ]


def test_toy_text_encoder_is_seeded():
    a = ToyTextEncoder(dim=32, seed=3).encode(["remove the fence"])
    b = ToyTextEncoder(dim=32, seed=3).encode(["remove the fence"])
    c = ToyTextEncoder(dim=32, seed=4).encode(["remove the fence"])
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_toy_text_encoder_rejects_tokenless_text():
    with pytest.raises(ValidationError):
        ToyTextEncoder(dim=16).encode(["?!"])


def test_build_encoders_unknown_name():
    with pytest.raises(ParameterError):
        build_encoders("bert")


# -- prompt -------------------------------------------------------------------

def test_build_prompt_stacks_text_then_visual():
    text, visual = ToyTextEncoder(dim=64), ToyImageEncoder(dim=64)
    prompt = build_prompt(Instruction("remove the fence"), _image(), text, visual)
    assert (prompt.length, prompt.dim) == (2, 64)
    assert np.allclose(prompt.tokens[0], embed_text(Instruction("remove the fence"), text).vector)
    assert prompt.to_tensor().shape == (1, 2, 64)



def test_visual_embedding_sees_the_original_not_the_cutout():
    image = _image(3)
    half = np.zeros((32, 32))
    half[:, :16] = 1.0
    encoder = ToyImageEncoder(dim=32)
    whole = embed_image(image, encoder).vector
    masked = embed_image(cutout(image, AlphaMask(half, MaskKind.HARD)), encoder).vector
    assert not np.allclose(whole, masked)

def test_build_prompt_dimension_mismatch():
    with pytest.raises(ShapeError):
        build_prompt(Instruction("remove the fence"), _image(), ToyTextEncoder(dim=64), ToyImageEncoder(dim=32))


@pytest.mark.parametrize("mode,length", [("none", 0), ("text", 1), ("visual", 1), ("both", 2)])
def test_select_tokens(mode, length):
    tokens = torch.arange(12.0).view(1, 2, 6)
    out = select_tokens(tokens, PromptMode(mode))
    assert out.shape == (1, length, 6)
    if mode == "visual":
        assert torch.equal(out[0, 0], tokens[0, 1])


def test_prompt_tokens_gradient_reaches_text_only():
    text, visual = ToyTextEncoder(dim=16), ToyImageEncoder(dim=16)
    images = torch.rand(1, 3, 32, 32)
    prompt_tokens(["remove the fence"], images, text, visual).sum().backward()
    assert text.projection.weight.grad is not None
    assert all(p.grad is None for p in visual.parameters())


# -- switch -------------------------------------------------------------------

def test_cosine_sim_rejects_zero_and_mismatch():
    with pytest.raises(ValidationError):
        cosine_sim(_emb([0.0, 0.0]), _emb([1.0, 0.0]))
    with pytest.raises(ShapeError):
        cosine_sim(_emb([1.0, 0.0]), _emb([1.0, 0.0, 0.0]))


def test_softmax2_rows_sum_to_one():
    rng = np.random.default_rng(0)
    for s_o, s_s in rng.uniform(-1, 1, size=(100, 2)):
        p_o, p_s = softmax2(float(s_o), float(s_s))
        assert abs(p_o + p_s - 1.0) < 1e-9


def test_switch_matches_bruteforce_oracle():
    rng = np.random.default_rng(42)

    def oracle(t, a_o, a_s, theta=0.5):
        s_o = t @ a_o / (np.linalg.norm(t) * np.linalg.norm(a_o))
        s_s = t @ a_s / (np.linalg.norm(t) * np.linalg.norm(a_s))
        p_s = math.exp(s_s) / (math.exp(s_o) + math.exp(s_s))
        return TransparencyClass.SEMI_TRANSPARENT if p_s > theta else TransparencyClass.OPAQUE

    for _ in range(100):
        t, a_o, a_s = rng.normal(size=(3, 16))
        got = decide_transparency(_emb(t), _emb(a_o), _emb(a_s), 0.5)
        assert got.decision is oracle(t, a_o, a_s)
        assert (got.s_s > got.s_o) == (got.decision is TransparencyClass.SEMI_TRANSPARENT)


def test_switch_tie_goes_to_opaque():
    anchor = _emb([1.0, 2.0, 3.0])
    scores = decide_transparency(_emb([0.5, 0.1, 0.2]), anchor, anchor, 0.5)
    assert scores.p_s == pytest.approx(0.5)
    assert scores.decision is TransparencyClass.OPAQUE


def test_switch_scores_on_text_encoder_are_consistent():
    encoder = ToyTextEncoder(dim=64)
    scores = transparency_scores(Instruction("remove the raindrops"), encoder)
    assert scores.decision is classify_transparency(Instruction("remove the raindrops"), encoder)
    assert (scores.p_s > scores.theta) == (scores.decision is TransparencyClass.SEMI_TRANSPARENT)



class _ScaledText(ToyTextEncoder):
    def __init__(self, factor):
        super().__init__(dim=64)
        self.factor = factor

    def encode(self, texts):
        return super().encode(texts) * self.factor


def test_switch_ignores_embedding_scale():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t, a_o, a_s = (_emb(rng.normal(size=8)) for _ in range(3))
        base = decide_transparency(t, a_o, a_s).decision
        for k in (0.01, 3.0, 250.0):
            assert decide_transparency(t.scaled(k), a_o.scaled(2.0 * k), a_s.scaled(k / 7.0)).decision is base
    for text in ("remove the fence", "clear the raindrops", "wipe the glare off"):
        expected = classify_transparency(Instruction(text), _ScaledText(1.0))
        assert classify_transparency(Instruction(text), _ScaledText(40.0)) is expected

@pytest.mark.parametrize("theta", [0.0, 1.0])
def test_switch_rejects_theta_outside_open_interval(theta):
    with pytest.raises(ParameterError):
        decide_transparency(_emb([1, 0]), _emb([1, 0]), _emb([0, 1]), theta)


# -- corpus -------------------------------------------------------------------

def test_bundled_corpus_loads():
    corpus = load_corpus()
    assert len(corpus.opaque) >= 20 and len(corpus.semi_transparent) >= 20
    assert "remove the opaque fence" in corpus.opaque


def test_corpus_rejects_duplicates_and_empties():
    with pytest.raises(ValidationError):
        InstructionCorpus(("a", "a"), ("b",))
    with pytest.raises(ValidationError):
        InstructionCorpus(("a", ""), ("b",))


def test_corpus_split_is_disjoint_and_seeded():
    corpus = load_corpus()
    train, test = corpus.split(5, seed=1)
    assert len(test.opaque) == 5 and len(test.semi_transparent) == 5
    assert not set(train.opaque) & set(test.opaque)
    assert corpus.split(5, seed=1)[1] == test


def test_corpus_sample_uses_category():
    corpus = _small_corpus()
    rng = np.random.default_rng(0)
    picked = corpus.sample(TransparencyClass.SEMI_TRANSPARENT, rng)
    assert picked.text in corpus.semi_transparent
    assert picked.category is TransparencyClass.SEMI_TRANSPARENT


def test_load_corpus_errors(tmp_path):
    with pytest.raises(LoadError):
        load_corpus(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"opaque": ["x"]}))
    with pytest.raises(LoadError):
        load_corpus(bad)


# -- contrastive fine-tuning --------------------------------------------------

def test_contrastive_loss_prefers_clustered_embeddings():
    labels = torch.tensor([0, 0, 1, 1])
    clustered = torch.tensor([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]])
    mixed = torch.tensor([[1.0, 0.0], [0.0, 1.0], [0.9, 0.1], [0.1, 0.9]])
    assert supervised_contrastive_loss(clustered, labels) < supervised_contrastive_loss(mixed, labels)


def test_finetune_leaves_original_untouched_and_widens_margin():
    corpus = _small_corpus()
    base = ToyTextEncoder(dim=64, seed=0)
    before = {k: v.clone() for k, v in base.state_dict().items()}
    tuned = finetune_text_encoder(corpus, base, steps=60, seed=0)
    assert all(torch.equal(before[k], v) for k, v in base.state_dict().items())
    assert category_margin(corpus, tuned) > category_margin(corpus, base)
    assert not tuned.training


def test_finetune_is_deterministic():
    corpus = _small_corpus()
    a = finetune_text_encoder(corpus, ToyTextEncoder(dim=32), steps=10, seed=5)
    b = finetune_text_encoder(corpus, ToyTextEncoder(dim=32), steps=10, seed=5)
    assert all(torch.equal(x, y) for x, y in zip(a.state_dict().values(), b.state_dict().values()))


def test_finetune_leaves_global_torch_rng_alone():
    corpus, base = _small_corpus(), ToyTextEncoder(dim=32)
    torch.manual_seed(77)
    expected = torch.rand(3)
    torch.manual_seed(77)
    finetune_text_encoder(corpus, base, steps=5, seed=1)
    assert torch.equal(torch.rand(3), expected)


def test_finetune_needs_enough_instructions():
    with pytest.raises(ValidationError):
        finetune_text_encoder(InstructionCorpus(("a",), ("b", "c")), ToyTextEncoder(dim=16), steps=1)
