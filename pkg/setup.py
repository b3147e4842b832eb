"""Build script for the optional compiled core.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile downgrades to a warning instead of
aborting the install.
"""

import os

import numpy as np
from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the Cython core if possible, warn and continue if not."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
            print(f"warning: compiled core skipped ({exc}); numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: building {ext.name} failed ({exc}); numpy fallback will be used")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError as exc:  # pragma: no cover
        print(f"warning: cython unavailable ({exc}); numpy fallback will be used")
        return []
    if not os.path.exists("src/nmpcm/_core.pyx"):
        print("warning: src/nmpcm/_core.pyx missing; numpy fallback will be used")
        return []
    ext = Extension(
        "nmpcm._core",
        ["src/nmpcm/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=[
            "-O3",
            "-ffp-contract=off",
            "-fno-builtin-sin",
            "-fno-builtin-cos",
            "-fno-builtin-sincos",
        ],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
