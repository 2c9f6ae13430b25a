"""
Local smoke run for lastlab.

Runs every command on a tiny model in a scratch run directory and checks
the artifacts each stage leaves behind.

Run with: python test_local.py [--keep]
"""

import os
import shutil
import sys
import tempfile
from pathlib import Path

# Fix Windows encoding
if sys.platform == "win32":
    sys.stdout.reconfigure(encoding='utf-8')

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dotenv import load_dotenv
load_dotenv()

import logging

logger = logging.getLogger(__name__)

SMOKE = (
    "policy.d_model=32",
    "policy.n_layers=2",
    "policy.n_heads=4",
    "adapters.n_heads=4",
    "policy.patch_size=16",
    "policy.max_answer_tokens=48",
    "policy.max_len=192",
    "latent.n_3d=4",
    "latent.n_wm=2",
    "world.feature_dim=8",
    "sft.phase1_epochs=1",
    "sft.phase2_epochs=1",
    "sft.batch_size=4",
    "grpo.iterations=1",
    "grpo.group_size=4",
    "grpo.scenes_per_iteration=2",
    "data.n_easy=4",
    "data.n_hard=4",
    "data.n_eval=2",
)

EXPECTED = {
    "gen-data": ["data/easy.jsonl", "data/hard.jsonl", "data/eval.jsonl", "config.txt", "vocab.txt"],
    "sft": ["sft.pt", "sft_phase1.pt", "sft_phase2.pt", "sft_log.csv"],
    "rl": ["rl.pt", "rl_log.csv"],
    "eval": ["eval.csv"],
    "report": ["report/summary.csv"],
}


def run_command(command: str, run_dir: Path) -> bool:
    """Run one CLI command and check its artifacts."""
    from lastlab.main import main as cli

    print("=" * 60)
    print(f"Running {command}")
    print("=" * 60)

    argv = [command, "--run-dir", str(run_dir)]
    for override in SMOKE:
        argv += ["--set", override]

    try:
        code = cli(argv)
    except Exception as e:
        logger.error(f"[FAIL] {command} raised: {e}")
        import traceback
        traceback.print_exc()
        return False

    if code != 0:
        print(f"[FAIL] {command} exited with status {code}")
        return False

    missing = [name for name in EXPECTED[command] if not (run_dir / name).exists()]
    if missing:
        print(f"[FAIL] {command} did not write: {', '.join(missing)}")
        return False

    print(f"[OK] {command} PASSED")
    return True


def main():
    """Run all stages."""
    print("\n" + "=" * 60)
    print("lastlab - Local Smoke Run")
    print("=" * 60 + "\n")

    keep = "--keep" in sys.argv[1:]
    scratch = Path(tempfile.mkdtemp(prefix="lastlab-smoke-"))
    run_dir = scratch / "run"
    print(f"Run directory: {run_dir}\n")

    results = []
    for command in EXPECTED:
        passed = run_command(command, run_dir)
        results.append((command, passed))
        if not passed:
            break

    # Summary
    print("\n" + "=" * 60)
    print("SMOKE SUMMARY")
    print("=" * 60)

    all_passed = len(results) == len(EXPECTED) and all(passed for _, passed in results)
    for name, passed in results:
        status = "[OK] PASSED" if passed else "[FAIL] FAILED"
        print(f"  {name}: {status}")

    print()
    if all_passed:
        print("All stages passed!")
    else:
        print("Some stages failed. Check the logs in the run directory.")

    if keep or not all_passed:
        print(f"Kept {scratch}")
    else:
        shutil.rmtree(scratch, ignore_errors=True)

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
