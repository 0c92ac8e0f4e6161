#!/usr/bin/env python3
# -*- coding: utf-8 -*-

import os
from setuptools import setup, find_packages

NAME = 'privlens'


def get_version():
    about = {}
    here = os.path.abspath(os.path.dirname(__file__))
    with open(os.path.join(here, NAME.replace('-', '_'), '__version__.py')) as f:
        exec(f.read(), about)
    return about['__version__']


setup(
    name=NAME,
    version=get_version(),
    description='Simulation and optimization of privacy-preserving camera lenses',
    long_description=open('README.rst').read(),
    packages=find_packages(exclude=['tests']),
    package_data={'privlens': ['data/*.json']},
    install_requires=[
        'numpy>=1.20.0',
        'scipy>=1.6.0',
        'attrs>=20.1.0',
        'sqlitedict>=1.7.0',
        'opencv-python-headless>=4.5.0',
    ],
    entry_points={
        'console_scripts': [
            'privlens = privlens.cli:main',
        ],
    },
    keywords='optics psf zernike privacy camera deconvolution',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Intended Audience :: Science/Research',
        'Natural Language :: English',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3 :: Only',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Physics',
        'Topic :: Scientific/Engineering :: Image Processing',
    ],
)
