"""Build script: compiles the optional C event-core extension.

The simulator runs fine without the extension (a pure-Python core is
selected at import time); the build therefore tolerates a missing
compiler or Cython and falls back to a source-only install.
Set TRIPSIM_NO_EXT=1 to skip the extension entirely.
"""

import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """build_ext that downgrades compile failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: C extension build skipped ({exc}); "
                  "using pure-Python core")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "using pure-Python core")


ext_modules = []
cmdclass = {}
if os.environ.get("TRIPSIM_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [Extension("tripsim._speedups", ["src/tripsim/_speedups.pyx"])],
            language_level="3",
        )
        cmdclass["build_ext"] = OptionalBuildExt
    except ImportError:
        pass

setup(ext_modules=ext_modules, cmdclass=cmdclass)
