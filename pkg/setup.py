"""Builds the optional compiled strapdown kernel; the package works without it."""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [Extension("sonicpose._kernels", ["src/sonicpose/_kernels.pyx"], extra_compile_args=["-O2"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
