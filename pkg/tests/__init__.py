"""Test suite for aslpinn"""
