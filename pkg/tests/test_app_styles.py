import re
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def _styled_classes():
    text = (ROOT / "app.py").read_text(encoding="utf-8")
    block = re.search(r"<style>(.*?)</style>", text, re.S).group(1)
    return set(re.findall(r"^\.([\w-]+)\s*\{", block, re.M))


def _used_classes():
    used = set()
    for path in [ROOT / "app.py", *sorted((ROOT / "views").glob("*.py"))]:
        for attr in re.findall(r"class=[\"']([^\"']+)[\"']", path.read_text(encoding="utf-8")):
            used.update(attr.split())
    return used


def test_every_style_rule_is_used():
    assert _styled_classes() <= _used_classes()


def test_every_used_class_has_a_rule():
    assert _used_classes() <= _styled_classes()
