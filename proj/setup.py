"""Builds the compiled extension by delegating to the project's CMake tree.

`pip install .` (or `pip install --no-build-isolation -e .`) configures a
scratch build directory, compiles the `_dcls` pybind11 module against the
static core, and drops it inside the `dcls` package.
"""

import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).parent.resolve()
        ext_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        build_dir = Path(self.build_temp).resolve() / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)

        configure = [
            "cmake",
            "-S",
            str(source_dir),
            "-B",
            str(build_dir),
            "-DCMAKE_BUILD_TYPE=Release",
            f"-DPython3_EXECUTABLE={sys.executable}",
            "-DDCLS_BUILD_PYTHON=ON",
        ]
        subprocess.run(configure, check=True)
        subprocess.run(
            [
                "cmake",
                "--build",
                str(build_dir),
                "--target",
                "_dcls",
                "-j",
                str(os.cpu_count() or 2),
            ],
            check=True,
        )

        built = list((build_dir / "python" / "dcls").glob("_dcls*.so"))
        if not built:
            raise RuntimeError("cmake did not produce the _dcls extension")
        ext_path.parent.mkdir(parents=True, exist_ok=True)
        ext_path.write_bytes(built[0].read_bytes())


setup(
    packages=["dcls"],
    package_dir={"dcls": "python/dcls"},
    ext_modules=[CMakeExtension("dcls._dcls")],
    cmdclass={"build_ext": CMakeBuild},
)
