"""Build script for the optional compiled kernels.

The package works without the extension (a pure numpy fallback is selected
at import time), so a failed compile only costs speed, not functionality.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the Cython kernels if possible, otherwise install pure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # toolchain missing / compile error
            print(f"volpeel: skipping compiled kernels ({exc}); "
                  "pure-python fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"volpeel: failed to build {ext.name} ({exc}); "
                  "pure-python fallback will be used")


def extensions():
    if os.environ.get("VOLPEEL_NO_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "volpeel.kernels._fast",
        ["src/volpeel/kernels/_fast.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
