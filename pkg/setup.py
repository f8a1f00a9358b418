from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# Compiled hot kernels (convolution + pooling inner loops). The build is
# optional: tcmtl falls back to the numpy implementations in
# tcmtl.kernels_py when the extension is missing.
ext = Extension(
    "tcmtl._kernels_c",
    ["src/tcmtl/_kernels_c.pyx"],
    extra_compile_args=["-O3"],
    optional=True,
)

setup(ext_modules=cythonize([ext], language_level=3) if cythonize else [])
