"""Tests for run configuration loading."""

from pathlib import Path

import pytest

from spectral_adv.exceptions import ConfigError
from spectral_adv.schemas import AttackMethod
from spectral_adv.settings import RunConfig, default_attacks, load_run_config


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep a stray .env or pyproject.toml out of the settings sources."""
    monkeypatch.chdir(tmp_path)
    for name in ("SPECTRAL_ADV_SEED", "SPECTRAL_ADV_TRAIN__EPOCHS"):
        monkeypatch.delenv(name, raising=False)


def _write(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "cfg.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults() -> None:
    """Without a file the MNIST-style defaults apply."""
    config = load_run_config(None)
    assert config.seed == 0
    assert config.train.epochs == 10
    assert config.train.batch_size == 50
    assert config.train.learning_rate == 0.01
    assert config.train.momentum == 0.9
    assert set(config.attacks) == set(default_attacks())
    assert config.attacks["spgd"].momentum == 0.75
    assert config.attacks["spgd"].step_size == 100.0


def test_load_file(blobs_config: Path) -> None:
    """TOML values land in the nested models; defaults fill the rest."""
    config = load_run_config(blobs_config)
    assert config.seed == 1
    assert config.dataset.source == "blobs"
    assert config.train.epochs == 2
    assert config.attacks["pgd"].steps == 3
    assert "fgsm" in config.attacks
    assert config.report.histogram_bins == 11


def test_attack_label_defaults_to_key(blobs_config: Path) -> None:
    """Resolved attacks are named after their config key."""
    assert load_run_config(blobs_config).attack("spgd").label == "spgd"


def test_partial_override_keeps_builtin_fields(tmp_path: Path) -> None:
    """Overriding one field of a built-in attack keeps the rest of it."""
    text = "[attacks.nosign]\nepsilon = 0.1\n\n[attacks.spgd]\nsteps = 5\n"
    path = _write(tmp_path, text)
    config = load_run_config(path)
    nosign = config.attacks["nosign"]
    assert nosign.method is AttackMethod.NOSIGN_PGD
    assert nosign.epsilon == 0.1
    assert nosign.step_size == 100.0
    assert nosign.momentum == 0.75
    spgd = config.attacks["spgd"]
    assert spgd.method is AttackMethod.SPGD
    assert spgd.steps == 5
    assert spgd.momentum == 0.75


def test_new_attack_starts_from_attack_defaults(tmp_path: Path) -> None:
    """A new attack name takes its table as written."""
    path = _write(tmp_path, "[attacks.wide]\nepsilon = 0.2\n")
    wide = load_run_config(path).attacks["wide"]
    assert wide.method is AttackMethod.PGD
    assert wide.epsilon == 0.2
    assert wide.step_size == 0.01


def test_attack_seed_follows_run_seed(tmp_path: Path) -> None:
    """Attacks without a seed of their own start from the run seed."""
    path = _write(tmp_path, "seed = 9\n\n[attacks.pgd]\nseed = 4\n")
    config = load_run_config(path)
    assert config.attack("spgd").seed == 9
    assert config.attack("pgd").seed == 4
    assert load_run_config(path, seed=11).attack("fgsm").seed == 11
    assert RunConfig(seed=3, train={"attack": "pgd"}).train_config().attack.seed == 3


def test_verify_threshold_defaults() -> None:
    """Default verify thresholds match the documented identities."""
    thresholds = RunConfig().verify.thresholds
    assert thresholds.orthogonality == 1e-12
    assert thresholds.round_trip == 1e-10
    assert thresholds.parseval == 1e-10
    assert thresholds.transport == 1e-8
    assert thresholds.transport_scaled == 1e-6
    assert thresholds.trajectory == 1e-6
    assert thresholds.finite_difference == 1e-4


def test_cli_overrides(blobs_config: Path) -> None:
    """Explicit seed and threads win over the file."""
    config = load_run_config(blobs_config, seed=42, threads=2)
    assert config.seed == 42
    assert config.threads == 2


def test_env_override(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    """SPECTRAL_ADV_ variables fill settings the file leaves open."""
    monkeypatch.setenv("SPECTRAL_ADV_TRAIN__EPOCHS", "3")
    path = _write(tmp_path, "[train]\nbatch_size = 7\n")
    config = load_run_config(path)
    assert config.train.epochs == 3
    assert config.train.batch_size == 7


def test_train_config(blobs_config: Path) -> None:
    """The run seed and the named attack flow into TrainConfig."""
    config = load_run_config(blobs_config)
    cfg = config.train_config("m.sadv")
    assert cfg.seed == 1
    assert cfg.attack is None
    assert cfg.checkpoint_path == "m.sadv"


def test_adversarial_train_config() -> None:
    """train.attack resolves to the named attack."""
    config = RunConfig(train={"attack": "pgd"})
    assert config.train_config().attack.method is AttackMethod.PGD


def test_syntax_error_has_line(tmp_path: Path) -> None:
    """Broken TOML reports the file and line."""
    path = _write(tmp_path, "seed = 1\n[train\nepochs = 2\n")
    with pytest.raises(ConfigError, match=r"cfg\.toml.*line 2"):
        load_run_config(path)


def test_missing_file(tmp_path: Path) -> None:
    """An unreadable path is a config error."""
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "nope.toml")


def test_fgsm_steps_error_names_field_and_line(tmp_path: Path) -> None:
    """FGSM with several steps points at the attack table."""
    path = _write(
        tmp_path,
        'seed = 1\n\n[attacks.quick]\nmethod = "FGSM"\nsteps = 3\n',
    )
    with pytest.raises(ConfigError) as info:
        load_run_config(path)
    message = str(info.value)
    assert "attacks.quick" in message
    assert "cfg.toml:3" in message
    assert "FGSM" in message


def test_unknown_field(tmp_path: Path) -> None:
    """Typos are rejected rather than ignored."""
    path = _write(tmp_path, "[train]\nepoch = 3\n")
    with pytest.raises(ConfigError, match="train.epoch"):
        load_run_config(path)


def test_unknown_attack_reference(tmp_path: Path) -> None:
    """Report sections must name configured attacks."""
    path = _write(tmp_path, '[report]\nstep_table = ["pgd", "missing"]\n')
    with pytest.raises(ConfigError, match="missing"):
        load_run_config(path)


def test_trajectory_attack_must_be_spgd(tmp_path: Path) -> None:
    """The SPGD/NoSignPGD trajectory check needs an SPGD attack."""
    path = _write(tmp_path, '[verify]\ntrajectory_attack = "pgd"\n')
    with pytest.raises(ConfigError, match="SPGD"):
        load_run_config(path)


def test_value_range_mismatch(tmp_path: Path) -> None:
    """Attacks in use must share the dataset's value range."""
    path = _write(
        tmp_path,
        "[dataset]\nvalue_range = [0.0, 255.0]\n",
    )
    with pytest.raises(ConfigError, match="value_range"):
        load_run_config(path)


def test_epsilon_grid_must_start_at_zero(tmp_path: Path) -> None:
    """Security-curve grids start at the natural point."""
    path = _write(tmp_path, "[report]\nepsilons = [0.1, 0.2]\n")
    with pytest.raises(ConfigError, match="start at 0"):
        load_run_config(path)


def test_mnist_needs_directory(tmp_path: Path) -> None:
    """source = mnist without mnist_dir is incomplete."""
    path = _write(tmp_path, '[dataset]\nsource = "mnist"\n')
    with pytest.raises(ConfigError, match="mnist_dir"):
        load_run_config(path)


def test_blob_datasets(blobs_config: Path) -> None:
    """Blobs split 80/20 into disjoint, deterministic train and test sets."""
    config = load_run_config(blobs_config)
    train, test = config.load_datasets()
    again, _ = config.load_datasets()
    assert (len(train), len(test)) == (48, 12)
    assert train.image_shape == (1, 1, 6)
    assert (train.images == again.images).all()
    assert train.value_range == (0.0, 1.0)


def test_auto_architecture() -> None:
    """layers = auto builds a small MLP for non-MNIST inputs."""
    config = RunConfig(dataset={"blob_dims": 5})
    train, _ = config.load_datasets()
    architecture = config.model.architecture(train)
    assert architecture.num_classes == 3
    assert "fc32" in architecture.descriptor


def test_bad_layers_is_config_error() -> None:
    """A class-count mismatch between model and data is a config error."""
    config = RunConfig(model={"layers": "fc8,fc5"})
    train, _ = config.load_datasets()
    with pytest.raises(ConfigError, match="classes"):
        config.model.architecture(train)
