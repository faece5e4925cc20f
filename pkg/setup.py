"""
VariantCast Setup Script
Recurrent network forecasting of weekly variant case counts
"""

from setuptools import setup

# Read the README file
def read_readme():
    with open("README.md", "r", encoding="utf-8") as fh:
        return fh.read()

# Read requirements, leaving out the testing and development block
def read_requirements():
    requirements = []
    with open("requirements.txt", "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# Testing"):
                break
            if line and not line.startswith("#"):
                requirements.append(line)
    return requirements

setup(
    name="variantcast",
    version="1.0.0",
    author="VariantCast Team",
    description="From-scratch RNN, LSTM and BiLSTM forecasting of weekly COVID-19 variant cases",
    long_description=read_readme(),
    long_description_content_type="text/markdown",
    py_modules=[
        "domain_models",
        "ndcore",
        "nn",
        "optim",
        "prep",
        "metrics",
        "ingest",
        "experiments",
        "report",
        "forecast_launcher",
    ],
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.8",
    install_requires=read_requirements(),
    extras_require={
        "test": ["pytest>=7.0.0", "pytest-cov>=4.0.0", "scikit-learn>=1.1.0"],
        "dev": ["black>=22.0.0", "flake8>=5.0.0", "mypy>=0.991"],
    },
    entry_points={
        "console_scripts": [
            "variantcast=forecast_launcher:main",
        ],
    },
    keywords=[
        "forecasting", "time-series", "lstm", "bilstm", "rnn",
        "backpropagation-through-time", "covid-19", "epidemiology",
    ],
)
