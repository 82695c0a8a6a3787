"""Modules numériques du pipeline de reconstruction"""
