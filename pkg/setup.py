from setuptools import setup

setup(
    name='confdim',
    version='0.3.0',
    packages=['confdim'],
    install_requires=[
        'click',
        'numpy',
        'scipy>=1.10',
        'networkx',
    ],
    entry_points={
        'console_scripts': [
            'confdim = confdim.cli:cli',
        ],
    },
)
