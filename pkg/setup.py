import sys

import numpy
from setuptools import Extension, setup

# The compiled kernel is an accelerator, not a hard requirement: the package
# falls back to the numpy implementation in seroscan._evidence_py when the
# extension is absent, so a failed build should not block installation.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "seroscan._evidence_cy",
                ["src/seroscan/_evidence_cy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build environment dependent
    print(f"seroscan: skipping compiled kernel ({exc})", file=sys.stderr)
    extensions = []

setup(ext_modules=extensions)
