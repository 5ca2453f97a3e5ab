"""Optional build of the compiled kernel extension.

The package is fully functional without it (a pure-Python fallback is
selected at import time). To build the fast path in place:

    pip install Cython
    python setup.py build_ext --inplace
"""

from setuptools import setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/duplexasr/kernels/_hotpath.pyx"],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
