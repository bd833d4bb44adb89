"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a pure-numpy
backend is selected at import time), so compilation failures are not
fatal to the install.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "latentdialog._kernels._ck",
                ["src/latentdialog/_kernels/_ck.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
