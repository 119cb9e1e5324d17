"""Build script: compiles the optional fast-kernel extension.

The package works without the extension (pure-numpy fallback); a failed
compile should not block installation, so the extension build degrades
gracefully when Cython or a C toolchain is missing.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "barcodemae.kernels._fast",
                ["src/barcodemae/kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
