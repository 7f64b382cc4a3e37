"""Offline stand-in for `python -m pip install`."""

import sys

KNOWN = {"openai", "pandas", "numpy", "scipy", "nltk", "matplotlib"}

args = sys.argv[1:]
if not args or args[0] != "install":
    sys.stderr.write("stub pip supports only 'install'\n")
    sys.exit(2)
names = [a for a in args[1:] if not a.startswith("-")]
for name in names:
    base = name.split("==")[0].split(">=")[0].lower()
    if base not in KNOWN:
        sys.stderr.write(
            f"ERROR: Could not find a version that satisfies the requirement {name}\n"
            f"ERROR: No matching distribution found for {name}\n"
        )
        sys.exit(1)
print("Successfully installed " + " ".join(names))
