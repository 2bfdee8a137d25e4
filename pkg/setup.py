from setuptools import setup

setup(
    name="glucotrend",
    version="1.0.0",
    description="Prognose der Einjahresänderung von HbA1c und Lipidwerten aus CGM- und Aktivitätsdaten (Wide-and-Deep-LSTM)",
    long_description=open("README.md", encoding="utf-8").read(),
    long_description_content_type="text/markdown",

    # Das Paket 'src' enthält die Pipeline-Module, 'app' das Kommandozeilen-Frontend
    packages=["src"],
    py_modules=["app"],

    # Abhängigkeiten (identisch zu requirements.txt)
    install_requires=[
        "numpy>=1.26.0",
        "pandas>=2.2.0",
        "scipy>=1.11.0",
        "scikit-learn>=1.4.0",
        "statsmodels>=0.14.1",
        "plotly>=5.19.0",
    ],

    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],

    entry_points={
        "console_scripts": [
            "glucotrend=app:main",
        ],
    },

    python_requires=">=3.9",
)
