#! src/agepop/_version.py

PACKAGE_VERSION = "0.4.0"
SCHEMA_VERSION = "1.0"
