"""Build script: compiles the optional fast kernels.

The package works without the extension (a numpy fallback is selected at
import time), so any failure to build it degrades to a pure-Python install
instead of aborting.  Set FLOWMTL_PURE=1 to skip the extension entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that tolerates a missing compiler toolchain."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # noqa: BLE001
            print(f"warning: building flowmtl.nn._kernels failed ({exc}); "
                  f"falling back to the pure numpy backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # noqa: BLE001
            print(f"warning: compiling {ext.name} failed ({exc}); "
                  f"falling back to the pure numpy backend")


ext_modules = []
cmdclass = {}
if not os.environ.get("FLOWMTL_PURE"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension(
                "flowmtl.nn._kernels",
                ["src/flowmtl/nn/_kernels.pyx"],
                extra_compile_args=["-O3"],
            )],
            language_level=3,
        )
        cmdclass = {"build_ext": optional_build_ext}
    except ImportError:
        print("warning: Cython not available; building without the compiled kernels")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
