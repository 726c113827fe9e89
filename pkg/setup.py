"""Builds the compiled speculative-execution core.

The extension is optional at runtime: ste falls back to the pure-Python
engine when the module is missing, so a failed build still yields a working
(slower) package.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "ste._speccore",
                ["src/ste/_speccore.pyx"],
                language="c++",
                extra_compile_args=["-O3", "-std=c++17"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
