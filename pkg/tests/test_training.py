"""Training config, augmentation and loop tests (tiny models, a handful of steps)."""

from pathlib import Path

import numpy as np
import pytest
import torch

from deobstruct.core.errors import NumericError, ParameterError
from deobstruct.core.imaging import TransparencyClass
from deobstruct.core.prompting import Instruction, load_corpus
from deobstruct.core.runlog import RunLog
from deobstruct.core.synth import generate_pairs
from deobstruct.core.system import TrainConfig, build_optimizer, build_system, load_train_config
from deobstruct.core.training import (
    assign_instructions,
    augment,
    crop_patch,
    flip_pair,
    l1_loss,
    l1_objective,
    train,
)


def _tiny_config(**kw):
    base = dict(
        total_steps=4,
        detector_warmup_steps=2,
        patch_schedule=((0, 16),),
        embed_dim=32,
        net_widths=(8, 16),
        net_blocks=1,
        net_heads=2,
        detector_depth=1,
        detector_channels=4,
        adapter_blocks=1,
        checkpoint_every=3,
        log_every=1,
    )
    base.update(kw)
    return TrainConfig(**base)


def _dataset(kind="fence", count=2, seed=0):
    return [(p, None) for p in generate_pairs(kind, count, size=32, seed=seed)]


# -- config -------------------------------------------------------------------

def test_default_config_is_valid():
    config = TrainConfig()
    assert config.stride == 8
    assert config.patch_size_at(0) == 64
    assert config.patch_size_at(1500) == 96
    assert config.patch_size_at(5000) == 128


@pytest.mark.parametrize("schedule", [
    (),
    ((10, 64),),
    ((0, 64), (0, 96)),
    ((0, 96), (100, 64)),
    ((0, 60),),
    ((0, 8),),
])
def test_bad_patch_schedules_are_rejected(schedule):
    with pytest.raises(ParameterError):
        TrainConfig(patch_schedule=schedule)


def test_config_rejects_bad_values():
    with pytest.raises(ParameterError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ParameterError):
        TrainConfig(prompt_mode="audio")
    with pytest.raises(ParameterError):
        TrainConfig(theta=1.0)


def test_config_dict_round_trip_and_unknown_keys():
    config = _tiny_config(prompt_mode="text")
    assert TrainConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ParameterError):
        TrainConfig.from_dict({"learning_rte": 1e-3})


def test_effective_patch_size_clamps_to_image():
    config = TrainConfig()
    assert config.effective_patch_size(2500, 64, 80) == 64
    assert config.effective_patch_size(0, 70, 70) == 64
    with pytest.raises(ParameterError):
        config.effective_patch_size(0, 4, 4)


def test_load_train_config_yaml_and_overrides(tmp_path):
    path = tmp_path / "desk.yaml"
    path.write_text("total_steps: 10\npatch_schedule: [[0, 32], [5, 64]]\n", encoding="utf-8")
    config = load_train_config(path, seed=3)
    assert config.total_steps == 10
    assert config.patch_schedule == ((0, 32), (5, 64))
    assert config.seed == 3
    path.write_text("bogus_key: 1\n", encoding="utf-8")
    with pytest.raises(ParameterError):
        load_train_config(path)


# -- objective and augmentation -----------------------------------------------

def test_l1_objective_and_tensor_loss_agree():
    pair = _dataset(count=1)[0][0]
    value = l1_objective(pair.background, pair.composite)
    expected = np.mean(np.abs(pair.background.pixels - pair.composite.pixels))
    assert value == pytest.approx(expected)
    a, b = torch.zeros(2, 3, 4, 4), torch.full((2, 3, 4, 4), 0.25)
    assert float(l1_loss(a, b)) == pytest.approx(0.25)


def test_flip_pair_flips_every_layer():
    pair = _dataset(count=1)[0][0]
    flipped = flip_pair(pair, horizontal=True, vertical=False)
    assert np.array_equal(flipped.mask_gt.alpha, pair.mask_gt.alpha[:, ::-1])
    assert np.array_equal(flipped.obstruction.pixels, pair.obstruction.pixels[:, ::-1])
    assert flip_pair(pair, False, False) is pair


def test_augment_with_zero_probability_is_identity():
    pair = _dataset(count=1)[0][0]
    assert augment(pair, np.random.default_rng(0), flip_prob=0.0) is pair


def test_crop_patch_keeps_pair_consistent():
    pair = _dataset(count=1)[0][0]
    crop = crop_patch(pair, 16, np.random.default_rng(1))
    assert crop.size == (16, 16)
    with pytest.raises(ParameterError):
        crop_patch(pair, 33, np.random.default_rng(1))


def test_assign_instructions_fills_by_category():
    corpus = load_corpus()
    data = _dataset("raindrop", 2) + [(_dataset(count=1)[0][0], Instruction("remove the fence"))]
    out = assign_instructions(data, corpus, seed=0)
    assert out[0][1].text in corpus.semi_transparent
    assert out[2][1].text == "remove the fence"
    assert [i.text for _, i in out] == [i.text for _, i in assign_instructions(data, corpus, seed=0)]


# -- the loop -----------------------------------------------------------------

def test_train_runs_warmup_then_joint(tmp_path):
    traces = []
    config = _tiny_config()
    checkpoint = train(_dataset(), config, out_dir=tmp_path / "run", on_step=traces.append)
    assert checkpoint.step == 6
    assert [t.phase for t in traces] == ["warmup"] * 2 + ["joint"] * 4
    assert all(t.mode is None for t in traces[:2])
    assert all(t.patch_size == 16 for t in traces)
    assert all(np.isfinite(t.loss) for t in traces)
    assert (tmp_path / "run" / "last.pt").is_file()
    assert (tmp_path / "run" / "step_000003.pt").is_file()
    log = RunLog(tmp_path / "run" / "train_log.jsonl")
    assert log.verify().ok and log.verify().records == 6


def test_adapter_runs_only_for_semi_transparent_steps():
    traces = []
    data = _dataset("fence", 1) + _dataset("raindrop", 1)
    train(data, _tiny_config(total_steps=6), on_step=traces.append)
    for trace in traces:
        if trace.phase == "joint":
            assert trace.adapter_ran == (trace.mode is TransparencyClass.SEMI_TRANSPARENT)


def test_adapter_disabled_never_runs():
    traces = []
    train(_dataset("snow", 1), _tiny_config(use_adapter=False), on_step=traces.append)
    assert not any(t.adapter_ran for t in traces)


def test_training_is_deterministic():
    a, b = [], []
    train(_dataset(), _tiny_config(), on_step=a.append)
    train(_dataset(), _tiny_config(), on_step=b.append)
    assert [t.loss for t in a] == [t.loss for t in b]
    assert [t.pair_index for t in a] == [t.pair_index for t in b]


def test_image_encoder_is_frozen():
    config = _tiny_config()
    system = build_system(config)
    before = [p.detach().clone() for p in system.image_encoder.parameters()]
    train(_dataset(), config, system=system)
    assert all(torch.equal(x, y) for x, y in zip(before, system.image_encoder.parameters()))


def test_non_finite_output_raises_numeric_error():
    config = _tiny_config(detector_warmup_steps=0)
    system = build_system(config)
    with torch.no_grad():
        system.net.output.bias.fill_(float("nan"))
    with pytest.raises(NumericError) as info:
        train(_dataset(), config, system=system)
    assert info.value.diagnostics["what"] == "removal network output"


def test_empty_dataset_is_rejected():
    with pytest.raises(ParameterError):
        train([], _tiny_config())


def test_shipped_desk_config_loads():
    config = load_train_config(Path(__file__).resolve().parent.parent / "configs" / "desk.yaml")
    assert config.patch_size_at(0) == 48
    assert config.prompt_mode == "both"


def test_minimum_patch_leaves_room_for_adapter_tokens():
    assert _tiny_config().min_patch == 16
    no_adapter = _tiny_config(use_adapter=False)
    assert no_adapter.min_patch == no_adapter.stride


def test_pairs_below_minimum_patch_are_a_parameter_error():
    small = [(p, None) for p in generate_pairs("raindrop", 2, size=12, seed=0)]
    with pytest.raises(ParameterError):
        train(small, _tiny_config(semi_anchor="remove the raindrops"))


def test_semi_transparent_pairs_train_at_minimum_patch():
    traces = []
    data = [(p, Instruction("remove the semi-transparent raindrops")) for p in generate_pairs("raindrop", 2, size=16)]
    train(data, _tiny_config(semi_anchor="remove the semi-transparent raindrops"), on_step=traces.append)
    joint = [t for t in traces if t.phase == "joint"]
    assert joint and all(t.adapter_ran and t.patch_size == 16 for t in joint)
    assert all(np.isfinite(t.loss) for t in traces)


def test_patch_schedule_counts_global_steps():
    traces = []
    config = _tiny_config(patch_schedule=((0, 16), (3, 32)))
    train(_dataset(), config, on_step=traces.append)
    assert [(t.step, t.phase, t.patch_size) for t in traces] == [
        (0, "warmup", 16), (1, "warmup", 16), (2, "joint", 16),
        (3, "joint", 32), (4, "joint", 32), (5, "joint", 32),
    ]


def test_adamw_step_without_gradient_or_decay_keeps_parameters():
    param = torch.nn.Parameter(torch.linspace(-1.0, 1.0, 12).reshape(3, 4))
    before = param.detach().clone()
    optimizer = build_optimizer([param], _tiny_config(weight_decay=0.0))
    param.grad = torch.zeros_like(param)
    optimizer.step()
    assert torch.equal(param.detach(), before)


def test_training_leaves_global_torch_rng_alone():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    train(_dataset(), _tiny_config())
    assert torch.equal(torch.rand(3), expected)
