# type: ignore
# Sphinx configuration of the slugmpc docs; not linted.

from pathlib import Path

project = 'slugmpc'
copyright = '2026, slugmpc developers'
author = 'slugmpc developers'

try:
    from slugmpc import __version__ as release
except (ModuleNotFoundError, ImportError):
    release = None
    manifest = Path(__file__).parents[2] / "pyproject.toml"
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if line.startswith("version"):
            release = line.split("=")[1].strip('" ')
            break

if release is None:
    raise RuntimeError("Could not get slugmpc's version")

extensions = [
    "sphinx.ext.autodoc",
    "myst_parser",
    "sphinx.ext.intersphinx",
    "sphinx.ext.viewcode",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "sphinx_copybutton",
]

autodoc_member_order = 'bysource'
autodoc_typehints = 'none'

# numpy-style docstrings throughout; Attributes sections stay as lists
napoleon_numpy_docstring = True
napoleon_google_docstring = False
napoleon_include_init_with_doc = False
napoleon_use_ivar = False
napoleon_use_param = True
napoleon_use_rtype = True

intersphinx_mapping = {
    'python': ('https://docs.python.org/3', None),
    'numpy': ('https://numpy.org/doc/stable', None),
    'scipy': ('https://docs.scipy.org/doc/scipy', None),
    'pandas': ('https://pandas.pydata.org/docs', None),
}

myst_enable_extensions = ["colon_fence"]
suppress_warnings = ["myst.header"]

exclude_patterns = []

html_theme = 'furo'
html_title = f"slugmpc {release}"
html_theme_options = {
    "dark_css_variables": {
        "color-api-keyword": "#40ffff",
    }
}
