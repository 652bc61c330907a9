"""Bundled sample images and the toy configuration.

A deterministic 64x64 content/style pair ships with the package so the
training smoke path and the CLI examples work without external data.
"""

from __future__ import annotations

import importlib.resources as resources
import os

from .patching import ImageBuffer, read_ppm


def _resource_path(name: str):
    return resources.files("styletrans").joinpath("data", name)


def sample_content() -> ImageBuffer:
    with resources.as_file(_resource_path("content.ppm")) as p:
        return read_ppm(p)


def sample_style() -> ImageBuffer:
    with resources.as_file(_resource_path("style.ppm")) as p:
        return read_ppm(p)


def sample_pair_dirs(dest: str):
    """Materialize the bundled pair under dest/content and dest/style."""
    cdir = os.path.join(dest, "content")
    sdir = os.path.join(dest, "style")
    os.makedirs(cdir, exist_ok=True)
    os.makedirs(sdir, exist_ok=True)
    for name, sub in (("content.ppm", cdir), ("style.ppm", sdir)):
        with resources.as_file(_resource_path(name)) as p:
            with open(p, "rb") as src, \
                    open(os.path.join(sub, name), "wb") as dst:
                dst.write(src.read())
    return cdir, sdir


def toy_config_path():
    """Path to the bundled desk-scale configuration file."""
    return _resource_path("toy.cfg")
