#!/usr/bin/env python
"""
Berry Pose - Launcher Script
Run this file to use the command line tool.

Usage:
    python run.py generate --out data/synth --berries 127 --views 84
    python run.py estimate --data data/synth --out preds.jsonl
    python run.py --test      # Run the test suites
"""
import subprocess
import sys
from pathlib import Path

# Set project root
PROJECT_ROOT = Path(__file__).parent.absolute()

# Make `src` importable as a package
sys.path.insert(0, str(PROJECT_ROOT))


def check_dependencies():
    """Check if required packages are installed."""
    required = ["numpy", "scipy", "pandas", "pydantic", "dotenv"]
    missing = []

    for pkg in required:
        try:
            __import__(pkg)
        except ImportError:
            missing.append(pkg)

    if missing:
        print(f"Missing packages: {', '.join(missing)}", file=sys.stderr)
        print("   Run: pip install -r requirements.txt", file=sys.stderr)
        return False
    return True


def run_tests():
    """Run the test suites with pytest."""
    print("=" * 50, file=sys.stderr)
    print("  Running test suites", file=sys.stderr)
    print("=" * 50, file=sys.stderr)

    suites = [str(PROJECT_ROOT / name) for name in ("test_quick.py", "test_comprehensive.py", "test_golden_tasks.py")]
    return subprocess.run([sys.executable, "-m", "pytest", "-q", *suites], cwd=PROJECT_ROOT).returncode


def main():
    args = sys.argv[1:]

    if "--test" in args:
        return run_tests()
    if not check_dependencies():
        return 1

    from src.cli.main import main as cli_main
    return cli_main(args)


if __name__ == "__main__":
    sys.exit(main())
