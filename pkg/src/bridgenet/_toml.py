import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

__all__ = ["tomllib", "tomli_w"]
