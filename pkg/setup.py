#!/usr/bin/env python

from setuptools import setup
from setuptools import Command
import glob
import os
import shutil

HERE = os.path.realpath(os.path.dirname(__file__))


class CleanCommand(Command):
    """Remove build products and run artifacts from the project root."""
    CLEAN_FILES = './build ./dist ./*.egg-info ./.pytest_cache ./runs'.split(' ')

    user_options = []

    def initialize_options(self):
        pass

    def finalize_options(self):
        pass

    def run(self):
        global HERE

        for path_spec in self.CLEAN_FILES:
            # Make paths absolute and relative to this path
            abs_paths = glob.glob(
                os.path.normpath(
                    os.path.join(
                        HERE, path_spec)))
            for path in [str(p) for p in abs_paths]:
                if not path.startswith(HERE):
                    # Die if path in CLEAN_FILES is absolute + outside this
                    # directory
                    raise ValueError(f"{path} is not a path inside {HERE}")
                print(f"removing {os.path.relpath(path)}")

                shutil.rmtree(path)


setup(name='stefanpy',
      version='0.1.0',
      description='Pseudospectral simulation of the stochastic Stefan problem with transport noise',
      packages=['stefanpy'],
      license='BSD 3-Clause License',
      python_requires='>=3.8',
      install_requires=[
          'numpy>=1.20',
          'scipy>=1.8',
          'pandas>=1.3',
          'altair>=4.2',
          'graphviz',
          'pydantic>=2.0',
          'ruamel.yaml>=0.17',
      ],
      extras_require={
          'test': ['pytest'],
      },
      entry_points={
          'console_scripts': ['stefanpy=stefanpy.cli:main'],
      },
      classifiers=[
          'Intended Audience :: Science/Research',
          'License :: OSI Approved :: BSD License',
          'Programming Language :: Python :: 3',
          'Topic :: Scientific/Engineering :: Mathematics',
      ],
      cmdclass={
          'clean': CleanCommand
      },
      )
