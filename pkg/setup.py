import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install
    cythonize = None

# compile-only fast-math lets gcc call vector tanh; never pass it to the
# linker, which would set flush-to-zero for the whole process
COMPILE_ARGS = ["-O3", "-ffast-math"]
if os.environ.get("DANNTE_PORTABLE") != "1":
    COMPILE_ARGS.append("-march=native")

ext_modules = []
if cythonize is not None and os.environ.get("DANNTE_NO_EXT") != "1":
    ext_modules = cythonize(
        [
            Extension(
                "dannte._lstm_ext",
                ["src/dannte/_lstm_ext.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=COMPILE_ARGS,
                libraries=["mvec", "m"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
