from setuptools import Extension, setup

# The compiled extremization kernel is optional: without Cython the package
# falls back to the numpy implementation selected at import time.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("gpimdp._kernels._core", ["src/gpimdp/_kernels/_core.pyx"])],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
