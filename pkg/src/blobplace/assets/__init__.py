"""Bundled demo data: procedural backgrounds (see scripts/make_assets.py)
and a stock list of placement prompts."""

from importlib import resources


def path(name: str) -> str:
    p = resources.files(__package__).joinpath(name)
    if not p.is_file():
        raise FileNotFoundError(f"no bundled asset named {name!r}")
    return str(p)


def prompts() -> list[str]:
    text = resources.files(__package__).joinpath("prompts.txt").read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]
