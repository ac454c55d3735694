"""Run the acceptance suite and print the per-criterion summary lines."""
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    proc = subprocess.run([sys.executable, "-m", "pytest", str(ROOT / "tests" / "test_acceptance.py"), "-q", "-s",
                           *sys.argv[1:]], cwd=ROOT, capture_output=True, text=True)
    lines = [ln for ln in proc.stdout.splitlines() if ln.startswith("AC")]
    print("\n".join(lines))
    print(proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr)
    sys.exit(proc.returncode)
