# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import re
import sys
from pathlib import Path

# -- Path setup --------------------------------------------------------------

sys.path.insert(0, str(Path(__file__).parent.parent.resolve()))
from cloth_canal import __version__  # noqa: E402

# -- Project information -----------------------------------------------------

project = "cloth-canal"
copyright = "2026, cloth-canal contributors"
author = "cloth-canal contributors"
package_description = (
    "Canonicalized-alignment rewards, a mass-spring cloth simulator and greedy "
    "planners for garment unfolding"
)

# The full version, including alpha/beta/rc tags
version = re.fullmatch(r"^(\d+\.\d+\.\d).*$", __version__).group(1)  # type: ignore
release = __version__


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
    "sphinx.ext.intersphinx",
    "sphinx.ext.napoleon",
    "sphinxcontrib.fulltoc",
    "myst_parser",
]

templates_path = ["_templates"]

source_suffix = [".rst", ".md"]
exclude_patterns = ["build/*", "_build/*"]


# -- Options for HTML output -------------------------------------------------

html_theme = "pydata_sphinx_theme"

html_theme_options = {
    "navigation_with_keys": False,
}

html_static_path: list[str] = []


# -- Options for intersphinx extension ---------------------------------------

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
}

# -- Options for autodoc extension -------------------------------------------

autodoc_typehints = "none"
