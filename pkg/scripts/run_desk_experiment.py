"""Run the desk-scale pipeline end to end: data, BC, RL, evaluation, benchmark."""

import subprocess
import sys
from pathlib import Path

BASE_DIR = Path(__file__).parent.parent
MAIN = BASE_DIR / "main.py"
DESK_CONFIG = BASE_DIR / "configs" / "desk.cfg"
EVAL_CONFIG = BASE_DIR / "configs" / "eval.cfg"


def run(step, *args):
    """Run one CLI command; returns False on a non-zero exit."""
    print(f"\n>>> {step}")
    try:
        subprocess.check_call([sys.executable, str(MAIN), *args])
        print(f"✓ {step}")
        return True
    except subprocess.CalledProcessError as e:
        print(f"✗ {step} (exit {e.returncode})")
        return False


def main(run_dir="runs/desk"):
    """Generate train/eval sets, pre-train with BC, fine-tune with RL and evaluate both."""
    root = BASE_DIR / run_dir
    train, held_out = root / "data" / "train", root / "data" / "eval"
    steps = [
        ("Generate training scenarios",
         "generate", "--config", str(DESK_CONFIG), "-o", str(train), "--seed", "0"),
        ("Generate evaluation scenarios",
         "generate", "--config", str(EVAL_CONFIG), "-o", str(held_out), "--seed", "1"),
        ("Behavioral cloning",
         "bc", "--config", str(DESK_CONFIG), "--data", str(train / "scenarios.bin"), "-o", str(root / "bc")),
        ("RL fine-tuning",
         "rl", "--config", str(DESK_CONFIG), "--data", str(train / "scenarios.bin"),
         "--eval-data", str(held_out / "scenarios.bin"),
         "--init-checkpoint", str(root / "bc" / "bc.ckpt"), "-o", str(root / "rl")),
        ("Evaluate BC policy (no dones)",
         "eval", "--checkpoint", str(root / "bc" / "bc.ckpt"), "--data", str(held_out / "scenarios.bin"),
         "--mode", "no-dones", "-o", str(root / "eval_bc")),
        ("Evaluate RL policy (no dones)",
         "eval", "--checkpoint", str(root / "rl" / "rl.ckpt"), "--data", str(held_out / "scenarios.bin"),
         "--mode", "no-dones", "-o", str(root / "eval_rl")),
        ("Simulator benchmark",
         "bench", "--data", str(train / "scenarios.bin"), "-o", str(root / "bench")),
    ]
    for step, *args in steps:
        if not run(step, *args):
            sys.exit(1)
    print(f"\nAll artifacts under {root}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
