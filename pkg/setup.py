import os

from setuptools import Extension, setup

# Set MODEL1IR_NO_EXT=1 to install the pure-Python path only.
ext_modules = []
if not os.environ.get("MODEL1IR_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "model1ir._kernels",
                    ["src/model1ir/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False},
        )

setup(ext_modules=ext_modules)
