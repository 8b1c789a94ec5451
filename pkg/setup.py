"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a missing compiler only costs speed.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Try to build the C core; degrade to the numpy backend on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing entirely
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"warning: building mimk._ckernels failed ({exc}); "
            "falling back to the pure numpy kernels",
            file=sys.stderr,
        )


def make_extensions():
    import numpy as np
    from Cython.Build import cythonize

    ext = Extension(
        "mimk._ckernels",
        ["src/mimk/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # keep FP semantics identical to the numpy backend (no FMA contraction)
        extra_compile_args=["-O2", "-ffp-contract=off"],
    )
    return cythonize([ext], language_level="3")


setup(
    ext_modules=make_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
