import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

openmp = os.environ.get("FEANET_NO_OPENMP", "") == ""
flags = ["-fopenmp"] if openmp else []

extensions = [
    Extension(
        "feanet._core",
        ["src/feanet/_core.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"] + flags,
        extra_link_args=flags,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
