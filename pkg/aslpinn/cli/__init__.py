"""Command-line surface for aslpinn"""
