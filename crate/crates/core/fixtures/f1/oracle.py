"""Independent check of the F1 replies: applies each reply's blocks, runs
unittest after every iteration and counts the final documents with ast."""

import ast
import pathlib
import re
import subprocess
import sys
import tempfile

HERE = pathlib.Path(__file__).parent


def loc(text):
    return sum(1 for line in text.splitlines() if line.strip())


def counts(test):
    tree = ast.parse(test)
    fns = [n for n in ast.walk(tree) if isinstance(n, ast.FunctionDef) and n.name.startswith("test")]
    asserts = 0
    for fn in fns:
        for node in ast.walk(fn):
            if isinstance(node, ast.Assert):
                asserts += 1
            elif isinstance(node, ast.Call) and isinstance(node.func, ast.Attribute) and node.func.attr.startswith("assert"):
                asserts += 1
    return len(fns), asserts


def main():
    test = prod = ""
    for reply in sorted((HERE / "replies").glob("*.md")):
        for block in re.findall(r"```python\n(.*?)```", reply.read_text(), re.S):
            if "assert" in block:
                test = block
            else:
                prod = block
        with tempfile.TemporaryDirectory() as d:
            (pathlib.Path(d) / "test_text_formatter.py").write_text(test)
            (pathlib.Path(d) / "text_formatter.py").write_text(prod)
            run = subprocess.run([sys.executable, "-m", "unittest", "discover", "-s", d], capture_output=True)
            if run.returncode != 0:
                print(f"{reply.name}: tests fail", file=sys.stderr)
                return 1
    fns, asserts = counts(test)
    print(fns, asserts, loc(test), loc(prod))
    return 0


if __name__ == "__main__":
    sys.exit(main())
