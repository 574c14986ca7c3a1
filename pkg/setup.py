from setuptools import setup

setup(
    name='cdpreid',
    version='0.1.0',
    description='Cross-spectrum dual-subspace pairing for RGB-infrared person re-identification, in numpy.',
    license='MIT/APACHE-2.0',
    packages=['cdpreid'],
    install_requires=[
        'matplotlib>=3.1',
        'numpy>=1.20',
        'toml>=0.9.4',
    ],
    extras_require={
        'dev': [],
        'test': ['pytest', 'pytest-cov'],
    },
    entry_points={
        'console_scripts': ['cdpreid=cdpreid.cli:run'],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
        'Topic :: Scientific/Engineering :: Image Recognition',
        'License :: OSI Approved :: MIT License',
        'License :: OSI Approved :: Apache Software License',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
    ],
    keywords='person re-identification infrared cross-modality triplet loss numpy',
    python_requires='>=3.8',
)
