"""Sweep execution, result storage and analyses over stored records."""
