import os
from setuptools import setup

this_directory = os.path.abspath(os.path.dirname(__file__))
with open(os.path.join(this_directory, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()


setup(
    name='auxtabl',
    packages=['auxtabl', 'auxtabl.examples'],
    package_data={'auxtabl': ['templates/*.j2']},
    use_scm_version={
        'relative_to': __file__,
        'write_to': 'auxtabl/version.py',
        'fallback_version': '0.1.0',
    },
    setup_requires=['setuptools_scm'],
    python_requires='>=3.11',
    description=('Low-rank auxiliary adaptation of bilinear attention networks '
                 'for limit order book forecasting.'),
    long_description=long_description,
    long_description_content_type='text/x-rst',
    license='MIT',
    keywords=['limit order book', 'TABL', 'low-rank adaptation', 'forecasting', 'numpy'],
    install_requires=[
        'jinja2>=2.8',
        'numpy>=1.24',
        'pandas>=1.5',
        'pytest',
    ],
    entry_points={
        'console_scripts': ['auxtabl=auxtabl.cli:main'],
    },
)
