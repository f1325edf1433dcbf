from pathlib import Path

from setuptools import find_packages, setup

# Read the README file
readme_file = Path(__file__).parent / "README.md"
long_description = ""
if readme_file.exists():
    long_description = readme_file.read_text(encoding="utf-8")

setup(
    name="multipolicy-eval",
    version="0.1.0",
    description="Multi-policy evaluation for tabular finite-horizon MDPs from one shared sampling distribution",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"multipolicy_eval": ["py.typed"]},
    install_requires=[
        "pydantic>=2.0",
        "numpy>=1.24",
        "pandas>=2.0",
        "joblib>=1.3",
    ],
    entry_points={"console_scripts": ["multipolicy-eval = multipolicy_eval.cli:main"]},
    python_requires=">=3.10",
    license="GPL-3.0-or-later",
    keywords=[
        "reinforcement-learning",
        "off-policy-evaluation",
        "importance-sampling",
        "mdp",
        "policy-evaluation",
    ],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Programming Language :: Python :: 3 :: Only",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
