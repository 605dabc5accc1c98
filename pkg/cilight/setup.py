from setuptools import find_packages, setup

setup(
    name='cilight',
    version='1.0',
    description='Run directories, logs and report files for the convex-integration runs',
    packages=find_packages(),
    install_requires=['h5py', 'numpy', 'pandas', 'pyyaml'])
