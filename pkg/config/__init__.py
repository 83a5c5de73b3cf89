"""
sosreach configuration package.

Loads and validates problem configs (YAML), either spelled out field by field
or naming a built-in system under ``systems/`` with parameter overrides.
"""
