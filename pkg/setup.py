from setuptools import setup, find_packages

setup(
    name="kcpsim",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*"]),
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "psutil==5.9.8",
        "python-dotenv==1.0.1",
        "python-json-logger==2.0.7"
    ],
    extras_require={
        "test": [
            "pytest>=7.4",
            "hypothesis>=6.90"
        ],
    },
    entry_points={
        "console_scripts": [
            "kcpsim=kcpsim.app.main:main",
        ],
    },
)
