from setuptools import setup, find_packages
import sys, os, re

README_FILE = "README.md"


def get_property(prop, project):
    result = re.search(
        r'{}\s*=\s*[\'"]([^\'"]*)[\'"]'.format(prop),
        open(project + "/__init__.py").read(),
    )
    return result.group(1)


project_name = "aeroorch"
setup(
    name=project_name,
    description="Frame-level simulator and learned orchestration for UAV-assisted vehicular edge-cloud networks",
    version=get_property("__version__", project_name),
    license="MIT",
    python_requires=">=3.8",
    install_requires=[
        "h5py",
        "jax",
        "objax",
        "numpy",
        "scipy>=1.7",
        "pytest",
        "plum-dispatch",
        "tqdm>=4.38",
        "matplotlib",
        "scienceplots",
        "networkx",
        "pandas",
        "pyyaml",
    ],
    packages=find_packages(exclude=["tests"]),
    entry_points={"console_scripts": ["aeroorch=aeroorch.cli:main"]},
    long_description=open(README_FILE, encoding="UTF-8").read(),
    long_description_content_type="text/markdown",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python :: 3",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: System :: Networking",
    ],
    keywords=[
        "UAV",
        "edge computing",
        "vehicular networks",
        "service function chain",
        "resource allocation",
        "deep reinforcement learning",
        "dueling double DQN",
        "simulation",
    ],
)
