#!/usr/bin/env python3
"""
Reconstruction CT cône à vues éparses
Point d'entrée en ligne de commande (équivalent au script `sparse-ct`)
"""

import os
import sys

# Ajouter la racine du projet au PYTHONPATH pour importer le package src
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
