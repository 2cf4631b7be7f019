"""Pair-directory and dataset persistence tests."""

import json

import numpy as np
import pytest

from deobstruct.core.errors import LoadError
from deobstruct.core.imaging import MaskKind
from deobstruct.core.storage import (
    load_dataset,
    load_pair,
    load_sample,
    save_dataset,
    save_image,
    save_pair,
)
from deobstruct.core.synth import generate_pair, generate_pairs


def _pair(kind="fence", seed=3):
    return generate_pair(kind, size=32, seed=seed)


def test_pair_round_trip_within_quantisation(tmp_path):
    pair = _pair("raindrop")
    loaded = load_pair(save_pair(pair, tmp_path / "p"))
    assert loaded.obstruction_kind == "raindrop"
    assert loaded.transparency is pair.transparency
    assert loaded.seed == pair.seed
    for a, b in [(loaded.composite, pair.composite), (loaded.background, pair.background)]:
        assert np.max(np.abs(a.pixels - b.pixels)) <= 1.0 / 255 + 1e-9
    assert np.max(np.abs(loaded.mask_gt.alpha - pair.mask_gt.alpha)) <= 1.0 / 255 + 1e-9


def test_hard_mask_round_trip_is_exact(tmp_path):
    pair = _pair("fence")
    loaded = load_pair(save_pair(pair, tmp_path / "p"))
    assert loaded.mask_gt.kind is MaskKind.HARD
    assert np.array_equal(loaded.mask_gt.alpha, pair.mask_gt.alpha)



def test_second_round_trip_changes_nothing(tmp_path):
    once = load_pair(save_pair(_pair("flare", seed=5), tmp_path / "a"))
    twice = load_pair(save_pair(once, tmp_path / "b"))
    assert np.array_equal(twice.mask_gt.alpha, once.mask_gt.alpha)
    for a, b in [(twice.composite, once.composite), (twice.background, once.background),
                 (twice.obstruction, once.obstruction)]:
        assert np.array_equal(a.pixels, b.pixels)

def test_instruction_stored_with_pair(tmp_path):
    save_pair(_pair(), tmp_path / "p", instruction="remove the fence")
    _, instruction = load_sample(tmp_path / "p")
    assert instruction == "remove the fence"
    save_pair(_pair(), tmp_path / "q")
    assert load_sample(tmp_path / "q")[1] is None


def test_missing_layer_names_path(tmp_path):
    directory = save_pair(_pair(), tmp_path / "p")
    (directory / "background.png").unlink()
    with pytest.raises(LoadError) as info:
        load_pair(directory)
    assert info.value.path.endswith("background.png")


def test_inconsistent_composite_is_rejected(tmp_path):
    pair = _pair()
    directory = save_pair(pair, tmp_path / "p")
    save_image(pair.background, directory / "composite.png")
    with pytest.raises(LoadError):
        load_pair(directory)


def test_corrupt_meta_is_rejected(tmp_path):
    directory = save_pair(_pair(), tmp_path / "p")
    (directory / "meta.json").write_text("{not json", encoding="utf-8")
    with pytest.raises(LoadError):
        load_pair(directory)


def test_dimension_mismatch_with_meta(tmp_path):
    directory = save_pair(_pair(), tmp_path / "p")
    meta = json.loads((directory / "meta.json").read_text())
    meta["height"] = 64
    (directory / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(LoadError):
        load_pair(directory)


def test_dataset_round_trip_keeps_order(tmp_path):
    pairs = generate_pairs("snow", 3, size=32, seed=1)
    paths = save_dataset(pairs, tmp_path / "ds", ["a", None, "c"])
    assert [p.name for p in paths] == ["pair_0000", "pair_0001", "pair_0002"]
    loaded = load_dataset(tmp_path / "ds")
    assert [p.seed for p, _ in loaded] == [p.seed for p in pairs]
    assert [t for _, t in loaded] == ["a", None, "c"]


def test_identical_pairs_write_identical_files(tmp_path):
    save_pair(_pair(seed=8), tmp_path / "a")
    save_pair(_pair(seed=8), tmp_path / "b")
    for name in ("composite.png", "background.png", "obstruction.png", "mask.png", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_dataset_is_an_error(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(LoadError):
        load_dataset(tmp_path / "empty")
