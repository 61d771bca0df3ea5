from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "potlatch._core",
                ["src/potlatch/_core.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
else:
    # No Cython available: the package falls back to the pure-Python core.
    ext_modules = []

setup(ext_modules=ext_modules)
