"""Build script. The Cython BPE kernel is optional: if the extension fails
to build the package falls back to the pure-Python implementation at import.
"""

from setuptools import setup

try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension("storyfill._fastbpe", ["src/storyfill/_fastbpe.pyx"])],
        compiler_directives={"language_level": 3, "boundscheck": False},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
