"""Core numerical modules for aslpinn"""
