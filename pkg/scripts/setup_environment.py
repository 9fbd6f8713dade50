"""Prepare a checkout: install requirements, check imports and run a smoke replay."""

import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
MIN_PYTHON = (3, 9)

# import name -> requirement name
PACKAGES = {
    "numpy": "numpy",
    "pandas": "pandas",
    "scipy": "scipy",
    "pydantic": "pydantic",
    "dotenv": "python-dotenv",
    "click": "click",
    "shapely": "shapely",
}


def install_requirements(skip: bool = False) -> bool:
    """pip install -r requirements.txt with the running interpreter."""
    requirements_file = ROOT / "requirements.txt"
    if skip:
        print("Skipping pip install (--no-install)")
        return True
    if not requirements_file.exists():
        print(f"✗ {requirements_file} not found")
        return False
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", str(requirements_file)])
    except subprocess.CalledProcessError as e:
        print(f"✗ pip failed: {e}")
        return False
    print("✓ Requirements installed")
    return True


def check_imports() -> bool:
    missing = []
    for module, requirement in PACKAGES.items():
        try:
            version = getattr(__import__(module), "__version__", "?")
            print(f"✓ {requirement} {version}")
        except ImportError:
            print(f"✗ {requirement}")
            missing.append(requirement)
    if missing:
        print(f"Missing: {', '.join(missing)}")
    return not missing


def smoke_replay() -> bool:
    """Generate two short scenarios and replay their logs; the log must score a clean run."""
    sys.path.insert(0, str(ROOT))
    from replay_engine.config.settings import GeneratorConfig
    from replay_engine.data.generator import generate_synthetic
    from replay_engine.data.scenario_loader import ScenarioBatch
    from replay_engine.evaluation.metrics import EvalMode, aggregate, episode_reports
    from replay_engine.sim.environment import ReplayEnvironment

    config = GeneratorConfig(num_scenarios=2, segment_seconds=3.0, max_steps=40)
    batch = ScenarioBatch.from_scenarios(generate_synthetic(config, seed=0), max_steps=40)
    episode = ReplayEnvironment().rollout(batch, replay_log=True)
    summary = aggregate(episode_reports(episode, batch, EvalMode.DONES))
    ok = summary.get("failure_rate") == 0.0
    mark = "✓" if ok else "✗"
    print(f"{mark} Logged replay: failure_rate={summary.get('failure_rate')} "
          f"progress_ratio={summary.get('progress_ratio', float('nan')):.4f}")
    return ok


def create_directories():
    for directory in ("runs", "logs"):
        (ROOT / directory).mkdir(parents=True, exist_ok=True)
        print(f"✓ {directory}/")


def main():
    print("Setting up Replay Engine...")
    print("=" * 50)
    if sys.version_info < MIN_PYTHON:
        print(f"✗ Python {'.'.join(map(str, MIN_PYTHON))}+ required, found {sys.version.split()[0]}")
        sys.exit(1)

    if not install_requirements(skip="--no-install" in sys.argv[1:]):
        sys.exit(1)

    print("\nChecking packages...")
    if not check_imports():
        sys.exit(1)

    print("\nSmoke replay...")
    if not smoke_replay():
        sys.exit(1)

    print("\nCreating run directories...")
    create_directories()

    print("\n" + "=" * 50)
    print("Ready. Next steps:")
    print("  pytest -m 'not slow'")
    print("  python scripts/run_desk_experiment.py")


if __name__ == "__main__":
    main()
